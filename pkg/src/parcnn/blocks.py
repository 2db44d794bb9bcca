"""Network building blocks: plain layers plus the compact-convolution blocks.

Every layer exposes ``forward(x, ctx)``, ``params()`` and ``buffers()``.
``ctx`` carries the training flag and an optional tap dictionary that
``Tap`` layers write intermediate activations into.

Compact blocks:

* ``DSConvBlock``   - depthwise K x K over all channels, then pointwise.
* ``ParConvBlock``  - channel shuffle, split into two branches; branch A
  expands by a pointwise conv (channel multiplier omega), applies a
  depthwise conv, then projects pointwise to the output width; branch B is
  a single pointwise conv; the branch outputs are summed channelwise.
* ``SParConvBlock`` - ParConv without the expanding pointwise conv; by
  default a quarter of the input channels feed the depthwise branch.

All compact blocks preserve spatial size (stride 1, padding (K-1)/2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class ForwardContext:
    training: bool = False
    taps: dict[str, Tensor] | None = None


def _init_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    std = 1.0 / np.sqrt(c_in * k * k)
    return rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(np.float32)


def _init_depthwise(rng: np.random.Generator, c: int, k: int) -> np.ndarray:
    std = 1.0 / np.sqrt(k * k)
    return rng.normal(0.0, std, size=(c, k, k)).astype(np.float32)


def _init_linear(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    std = 1.0 / np.sqrt(n_in)
    return rng.normal(0.0, std, size=(n_out, n_in)).astype(np.float32)


class Layer:
    """Base class; layers are containers of named parameters and buffers."""

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        raise NotImplementedError

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def buffers(self) -> list[tuple[str, Tensor]]:
        return []


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, bias: bool = True,
                 rng: np.random.Generator | None = None):
        if min(in_channels, out_channels, kernel, stride) < 1 or padding < 0:
            raise ValueError("invalid convolution geometry")
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_init_conv(rng, out_channels, in_channels, kernel),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, np.float32), requires_grad=True) \
            if bias else None

    def forward(self, x, ctx):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class DepthwiseConv2d(Layer):
    def __init__(self, channels: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_init_depthwise(rng, channels, kernel), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, np.float32), requires_grad=True) \
            if bias else None

    def forward(self, x, ctx):
        return T.depthwise_conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class BatchNorm2d(Layer):
    """Four per-channel values: scale, shift, running mean, running variance."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.scale = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, np.float32))
        self.running_var = Tensor(np.ones(channels, np.float32))

    def forward(self, x, ctx):
        return T.batch_norm2d(x, self.scale, self.shift,
                              self.running_mean, self.running_var,
                              training=ctx.training, momentum=self.momentum,
                              eps=self.eps)

    def params(self):
        return [("scale", self.scale), ("shift", self.shift)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class ReLU(Layer):
    def forward(self, x, ctx):
        return T.relu(x)


class MaxPool2d(Layer):
    def __init__(self, window: int = 3, stride: int = 2, padding: int = 0):
        self.window = window
        self.stride = stride
        self.padding = padding

    def forward(self, x, ctx):
        return T.max_pool2d(x, self.window, self.stride, self.padding)


class Flatten(Layer):
    def forward(self, x, ctx):
        return T.flatten(x)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(_init_linear(rng, out_features, in_features),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, np.float32), requires_grad=True) \
            if bias else None

    def forward(self, x, ctx):
        return T.linear(x, self.weight, self.bias)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class Tap(Layer):
    """Records the current activation under ``name`` when taps are collected."""

    def __init__(self, name: str):
        self.name = name

    def forward(self, x, ctx):
        if ctx.taps is not None:
            ctx.taps[self.name] = x
        return x


class Sequential(Layer):
    def __init__(self, children: list[tuple[str, Layer]]):
        self.children = children

    def forward(self, x, ctx):
        for _, child in self.children:
            x = child.forward(x, ctx)
        return x

    def params(self):
        return [(f"{name}.{p}", t)
                for name, child in self.children for p, t in child.params()]

    def buffers(self):
        return [(f"{name}.{p}", t)
                for name, child in self.children for p, t in child.buffers()]


# -- channel shuffle -------------------------------------------------------

def shuffle_permutation(channels: int, groups: int = 2) -> np.ndarray:
    """The reshape-(groups, C/groups), transpose, flatten channel permutation."""
    if channels % groups:
        raise ValueError(f"{channels} channels not divisible into {groups} groups")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int = 2) -> Tensor:
    """Permute channels so consecutive groups interleave; values untouched."""
    return T.permute_channels(x, shuffle_permutation(x.shape[1], groups))


class ChannelShuffle(Layer):
    def __init__(self, channels: int, groups: int = 2):
        self.perm = shuffle_permutation(channels, groups)

    def forward(self, x, ctx):
        return T.permute_channels(x, self.perm)


# -- compact-block width arithmetic -----------------------------------------

def parconv_widths(in_channels: int, alpha: float, omega: float) -> tuple[int, int, int]:
    """Realized integer widths (branch_a, expanded, branch_b).

    branch_a = floor(alpha * C_in); expanded = round-half-up(omega * alpha *
    C_in), minimum 1; branch_b gets the remaining channels.
    """
    a = int(np.floor(alpha * in_channels))
    b = in_channels - a
    e = max(1, int(np.floor(omega * alpha * in_channels + 0.5)))
    return a, e, b


def sparconv_widths(in_channels: int, split: float) -> tuple[int, int]:
    """Realized integer widths (branch_a, branch_b) for the simplified block."""
    a = int(np.floor(split * in_channels))
    return a, in_channels - a


@dataclass
class ParConvSpec:
    """Declarative description of one ParConv block."""

    in_channels: int
    out_channels: int
    omega: float
    alpha: float = 0.5
    kernel: int = 3
    include_shuffle: bool = True
    # BN+ReLU after the expanding pointwise conv and after the depthwise conv
    # (branch outputs are always summed raw, then normalized once).
    inner_bn: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and >= 1")
        a, e, b = self.widths()
        if a < 1 or b < 1:
            raise ValueError(f"degenerate branch split {a}/{b} for alpha={self.alpha}")
        if e < 1:
            raise ValueError("expanded width must be >= 1")

    def widths(self) -> tuple[int, int, int]:
        return parconv_widths(self.in_channels, self.alpha, self.omega)


@dataclass
class BottleneckHeadSpec:
    """Two linear layers feature_dim -> bottleneck_dim -> output_dim."""

    feature_dim: int
    bottleneck_dim: int
    output_dim: int

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise ValueError("bottleneck dimension must be >= 1")
        if self.feature_dim < 1 or self.output_dim < 1:
            raise ValueError("head dimensions must be positive")

    def flops(self) -> int:
        return self.feature_dim * self.bottleneck_dim \
            + self.bottleneck_dim * self.output_dim


def _bn_relu(channels: int) -> list[tuple[str, Layer]]:
    return [("bn", BatchNorm2d(channels)), ("relu", ReLU())]


class ParConvBlock(Layer):
    """Two-branch compact replacement for a stride-1 standard convolution."""

    def __init__(self, spec: ParConvSpec, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        a, e, b = spec.widths()
        self.widths = (a, e, b)
        pad = (spec.kernel - 1) // 2
        self.shuffle = ChannelShuffle(spec.in_channels) if spec.include_shuffle else None

        expand_stack: list[tuple[str, Layer]] = [
            ("pw_expand", Conv2d(a, e, 1, bias=True, rng=rng))]
        if spec.inner_bn:
            expand_stack += _bn_relu(e)
        expand_stack.append(
            ("dw", DepthwiseConv2d(e, spec.kernel, padding=pad, bias=True, rng=rng)))
        if spec.inner_bn:
            expand_stack += _bn_relu(e)
        expand_stack.append(
            ("pw_project", Conv2d(e, spec.out_channels, 1, bias=True, rng=rng)))
        self.branch_a = Sequential(expand_stack)
        self.branch_b = Conv2d(b, spec.out_channels, 1, bias=True, rng=rng)
        self.post_bn = BatchNorm2d(spec.out_channels)

    def forward(self, x, ctx):
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected {self.spec.in_channels} channels, got {x.shape[1]}")
        if self.shuffle is not None:
            x = self.shuffle.forward(x, ctx)
        a, _, _ = self.widths
        xa = T.narrow_channels(x, 0, a)
        xb = T.narrow_channels(x, a, x.shape[1] - a)
        ya = self.branch_a.forward(xa, ctx)
        yb = self.branch_b.forward(xb, ctx)
        out = T.add(ya, yb)
        out = self.post_bn.forward(out, ctx)
        return T.relu(out)

    def params(self):
        out = [(f"branch_a.{n}", t) for n, t in self.branch_a.params()]
        out += [(f"branch_b.{n}", t) for n, t in self.branch_b.params()]
        out += [(f"post_bn.{n}", t) for n, t in self.post_bn.params()]
        return out

    def buffers(self):
        out = [(f"branch_a.{n}", t) for n, t in self.branch_a.buffers()]
        out += [(f"post_bn.{n}", t) for n, t in self.post_bn.buffers()]
        return out


class SParConvBlock(Layer):
    """ParConv without the expanding pointwise conv before the depthwise stage."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 split: float = 0.25, include_shuffle: bool = True,
                 inner_bn: bool = True, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        if min(in_channels, out_channels) < 1:
            raise ValueError("channel counts must be positive")
        a, b = sparconv_widths(in_channels, split)
        if a < 1 or b < 1:
            raise ValueError(f"degenerate branch split {a}/{b} for split={split}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.split = split
        self.widths = (a, b)
        pad = (kernel - 1) // 2
        self.shuffle = ChannelShuffle(in_channels) if include_shuffle else None
        stack: list[tuple[str, Layer]] = [
            ("dw", DepthwiseConv2d(a, kernel, padding=pad, bias=True, rng=rng))]
        if inner_bn:
            stack += _bn_relu(a)
        stack.append(("pw_project", Conv2d(a, out_channels, 1, bias=True, rng=rng)))
        self.branch_a = Sequential(stack)
        self.branch_b = Conv2d(b, out_channels, 1, bias=True, rng=rng)
        self.post_bn = BatchNorm2d(out_channels)

    def forward(self, x, ctx):
        if self.shuffle is not None:
            x = self.shuffle.forward(x, ctx)
        a, _ = self.widths
        xa = T.narrow_channels(x, 0, a)
        xb = T.narrow_channels(x, a, x.shape[1] - a)
        out = T.add(self.branch_a.forward(xa, ctx), self.branch_b.forward(xb, ctx))
        out = self.post_bn.forward(out, ctx)
        return T.relu(out)

    def params(self):
        out = [(f"branch_a.{n}", t) for n, t in self.branch_a.params()]
        out += [(f"branch_b.{n}", t) for n, t in self.branch_b.params()]
        out += [(f"post_bn.{n}", t) for n, t in self.post_bn.params()]
        return out

    def buffers(self):
        out = [(f"branch_a.{n}", t) for n, t in self.branch_a.buffers()]
        out += [(f"post_bn.{n}", t) for n, t in self.post_bn.buffers()]
        return out


class DSConvBlock(Layer):
    """Depthwise K x K over all input channels followed by a pointwise conv."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 inner_bn: bool = True, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        if min(in_channels, out_channels) < 1:
            raise ValueError("channel counts must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        pad = (kernel - 1) // 2
        stack: list[tuple[str, Layer]] = [
            ("dw", DepthwiseConv2d(in_channels, kernel, padding=pad, bias=True, rng=rng))]
        if inner_bn:
            stack += _bn_relu(in_channels)
        stack.append(("pw", Conv2d(in_channels, out_channels, 1, bias=True, rng=rng)))
        stack += _bn_relu(out_channels)
        self.stack = Sequential(stack)

    def forward(self, x, ctx):
        return self.stack.forward(x, ctx)

    def params(self):
        return self.stack.params()

    def buffers(self):
        return self.stack.buffers()


class ResidualBlock(Layer):
    """Adds a skip path around ``body``.

    With matching channel counts and spatial size the skip is the identity;
    otherwise a pointwise projection (with BN) adapts channels, striding when
    the body downsamples.
    """

    def __init__(self, body: Layer, in_channels: int, out_channels: int,
                 skip_stride: int = 1, post_relu: bool = False,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.body = body
        self.post_relu = post_relu
        if in_channels == out_channels and skip_stride == 1:
            self.projection = None
        else:
            self.projection = Sequential([
                ("pw", Conv2d(in_channels, out_channels, 1, stride=skip_stride,
                              bias=True, rng=rng)),
                ("bn", BatchNorm2d(out_channels)),
            ])

    def forward(self, x, ctx):
        y = self.body.forward(x, ctx)
        skip = x if self.projection is None else self.projection.forward(x, ctx)
        if y.shape[2:] != skip.shape[2:]:
            raise ValueError(
                f"residual spatial mismatch: body {y.shape[2:]} vs skip {skip.shape[2:]}")
        out = T.add(y, skip)
        return T.relu(out) if self.post_relu else out

    def params(self):
        out = [(f"body.{n}", t) for n, t in self.body.params()]
        if self.projection is not None:
            out += [(f"projection.{n}", t) for n, t in self.projection.params()]
        return out

    def buffers(self):
        out = [(f"body.{n}", t) for n, t in self.body.buffers()]
        if self.projection is not None:
            out += [(f"projection.{n}", t) for n, t in self.projection.buffers()]
        return out


class BottleneckHead(Layer):
    """Two linear layers M -> B -> O, no nonlinearity in between."""

    def __init__(self, spec: BottleneckHeadSpec, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.fc1 = Linear(spec.feature_dim, spec.bottleneck_dim, rng=rng)
        self.fc2 = Linear(spec.bottleneck_dim, spec.output_dim, rng=rng)

    def forward(self, x, ctx):
        return self.fc2.forward(self.fc1.forward(x, ctx), ctx)

    def params(self):
        return [(f"fc1.{n}", t) for n, t in self.fc1.params()] + \
               [(f"fc2.{n}", t) for n, t in self.fc2.params()]


def build_parconv(spec: ParConvSpec, rng: np.random.Generator | None = None) -> ParConvBlock:
    return ParConvBlock(spec, rng=rng)


def build_sparconv(in_channels: int, out_channels: int, kernel: int = 3,
                   split: float = 0.25,
                   rng: np.random.Generator | None = None) -> SParConvBlock:
    return SParConvBlock(in_channels, out_channels, kernel, split, rng=rng)


def build_dsconv(in_channels: int, out_channels: int, kernel: int = 3,
                 rng: np.random.Generator | None = None) -> DSConvBlock:
    return DSConvBlock(in_channels, out_channels, kernel, rng=rng)


def build_bottleneck_head(spec: BottleneckHeadSpec,
                          rng: np.random.Generator | None = None) -> BottleneckHead:
    return BottleneckHead(spec, rng=rng)


def wrap_residual(block: Layer, in_channels: int, out_channels: int,
                  skip_stride: int = 1, post_relu: bool = False,
                  rng: np.random.Generator | None = None) -> ResidualBlock:
    return ResidualBlock(block, in_channels, out_channels, skip_stride,
                         post_relu, rng=rng)
