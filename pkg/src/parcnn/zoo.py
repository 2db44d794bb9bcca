"""Named reference architectures.

* ``dcnn_table2``   - the 48x48 character-model network used as the golden
  target of the cost analyzer: 14 standard conv layers (channels growing
  100 -> 700, all with BN+ReLU), 3x3/stride-2 max pooling between stages,
  a 1x1 conv, then a 700 -> 500 -> 22080 fully-connected head. Spatial
  trace: 48 -> 46 -> 22 -> 10 -> 4 -> 1.
* ``mnist_small``   - a desk-scale 28x28 digit classifier in the same
  style: first/last convs kept standard, four interior 3x3 convs eligible
  for compact-block replacement, attention taps around the two
  constant-resolution stages.
* ``res18_mini``    - an 18-layer residual network adapted to 28x28
  single-channel input: 3x3 stem (stride 1, no initial pooling), four
  stages of two basic blocks with [64, 128, 256, 512] channels, stage
  strides [1, 2, 2, 2], global max pooling, 512 -> 10 classifier.
  Spatial trace: 28 -> 28 -> 14 -> 7 -> 4 -> 1.
* ``parres18_mini`` - ``res18_mini`` with every 3x3 convolution inside the
  residual bodies replaced by a ParConv block (omega = 0.5). Stride-2
  positions become max pool (3x3, stride 2, pad 1) followed by a stride-1
  ParConv, since ParConv itself always preserves spatial size.
"""
from __future__ import annotations

from .arch import ArchSpec

ZOO_NAMES = ("dcnn_table2", "mnist_small", "res18_mini", "parres18_mini")


def _conv(name: str, out_channels: int, kernel: int = 3, stride: int = 1,
          padding: int = 1, relu: bool = True) -> dict:
    return {"type": "conv", "name": name, "out_channels": out_channels,
            "kernel": kernel, "stride": stride, "padding": padding,
            "bias": True, "bn": True, "relu": relu}


def _pool(padding: int = 0) -> dict:
    return {"type": "maxpool", "window": 3, "stride": 2, "padding": padding}


def _tap(name: str) -> dict:
    return {"type": "tap", "name": name}


def dcnn_table2() -> ArchSpec:
    layers = [
        _conv("conv1", 100, padding=0),
        _pool(),
        _tap("s2_in"),
        _conv("conv2_1", 100),
        _conv("conv2_2", 200),
        _conv("conv2_3", 300),
        _conv("conv2_4", 300),
        _tap("s2_out"),
        _pool(),
        _tap("s3_in"),
        _conv("conv3_1", 300),
        _conv("conv3_2", 400),
        _conv("conv3_3", 500),
        _conv("conv3_4", 500),
        _tap("s3_out"),
        _pool(),
        _tap("s4_in"),
        _conv("conv4_1", 500),
        _conv("conv4_2", 600),
        _conv("conv4_3", 700),
        _conv("conv4_4", 700),
        _tap("s4_out"),
        _pool(),
        _conv("conv5", 700, kernel=1, padding=0),
        {"type": "flatten"},
        {"type": "linear", "name": "fc1", "out_features": 500},
        {"type": "linear", "name": "fc2", "out_features": 22080},
    ]
    return ArchSpec(1, 48, 48, layers)


def mnist_small() -> ArchSpec:
    layers = [
        _conv("conv1", 16, padding=0),
        _pool(),
        _tap("s1_in"),
        _conv("conv2_1", 32),
        _conv("conv2_2", 32),
        _tap("s1_out"),
        _pool(),
        _tap("s2_in"),
        _conv("conv3_1", 64),
        _conv("conv3_2", 64),
        _tap("s2_out"),
        _pool(),
        _conv("conv4", 96, kernel=1, padding=0),
        {"type": "flatten"},
        {"type": "linear", "name": "fc1", "out_features": 100},
        {"type": "linear", "name": "fc2", "out_features": 10},
    ]
    return ArchSpec(1, 28, 28, layers)


def _basic_block(name: str, out_channels: int, stride: int) -> dict:
    body = [
        _conv(f"{name}_a", out_channels, stride=stride),
        _conv(f"{name}_b", out_channels, relu=False),
    ]
    return {"type": "residual", "name": name, "body": body, "post_relu": True}


def res18_mini() -> ArchSpec:
    layers = [_conv("stem", 64)]
    channels = (64, 128, 256, 512)
    strides = (1, 2, 2, 2)
    for i, (c, s) in enumerate(zip(channels, strides), start=1):
        layers.append(_basic_block(f"stage{i}_block1", c, s))
        layers.append(_basic_block(f"stage{i}_block2", c, 1))
    layers += [
        {"type": "maxpool", "name": "global_pool", "window": 4, "stride": 4,
         "padding": 0},
        {"type": "flatten"},
        {"type": "linear", "name": "fc", "out_features": 10},
    ]
    return ArchSpec(1, 28, 28, layers)


def _parconv(name: str, out_channels: int) -> dict:
    return {"type": "parconv", "name": name, "out_channels": out_channels,
            "omega": 0.5}


def _par_block(name: str, out_channels: int, stride: int) -> dict:
    body: list[dict] = []
    if stride != 1:
        body.append({"type": "maxpool", "name": f"{name}_pool", "window": 3,
                     "stride": 2, "padding": 1})
    body += [_parconv(f"{name}_a", out_channels), _parconv(f"{name}_b", out_channels)]
    return {"type": "residual", "name": name, "body": body, "post_relu": True}


def parres18_mini() -> ArchSpec:
    layers = [_conv("stem", 64)]
    channels = (64, 128, 256, 512)
    strides = (1, 2, 2, 2)
    for i, (c, s) in enumerate(zip(channels, strides), start=1):
        layers.append(_par_block(f"stage{i}_block1", c, s))
        layers.append(_par_block(f"stage{i}_block2", c, 1))
    layers += [
        {"type": "maxpool", "name": "global_pool", "window": 4, "stride": 4,
         "padding": 0},
        {"type": "flatten"},
        {"type": "linear", "name": "fc", "out_features": 10},
    ]
    return ArchSpec(1, 28, 28, layers)


def build_zoo_arch(name: str) -> ArchSpec:
    """Return the named ArchSpec; raises on unknown names."""
    builders = {
        "dcnn_table2": dcnn_table2,
        "mnist_small": mnist_small,
        "res18_mini": res18_mini,
        "parres18_mini": parres18_mini,
    }
    if name not in builders:
        raise ValueError(f"unknown zoo model {name!r}; known: {', '.join(ZOO_NAMES)}")
    return builders[name]()
