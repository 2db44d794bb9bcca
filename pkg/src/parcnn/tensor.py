"""Dense float tensors with reverse-mode automatic differentiation.

Feature maps are laid out batch x channels x height x width. The op set is
exactly what the networks in this toolkit need: 2-D convolution (standard,
depthwise, pointwise via K=1), linear layers, batch normalization, ReLU,
max pooling, softmax/log-softmax, elementwise arithmetic with limited
broadcasting, reductions, reshapes, and channel slicing/permutation.

Gradients accumulate into ``Tensor.grad`` (a plain ndarray of the same
shape); calling ``backward`` twice without clearing grads accumulates.
The graph is retained, not freed. Default dtype is float32; float64 inputs
are honored so finite-difference oracles can run at full precision.

Forward ops verify their outputs are finite and raise NumericalError
otherwise; disable with ``finite_checks(False)`` in hot loops at your own
risk.
"""
from __future__ import annotations

import contextlib
import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NumericalError

_FLOAT_TYPES = (np.float32, np.float64)
_FINITE_CHECKS = True


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Temporarily toggle NaN/Inf verification of op outputs."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    if dtype is None:
        # numpy scalars (e.g. sum() over all axes) must keep their precision
        if isinstance(data, (np.ndarray, np.generic)) \
                and data.dtype.type in _FLOAT_TYPES:
            dtype = data.dtype
        else:
            dtype = np.float32
    return np.asarray(data, dtype=dtype)


class Tensor:
    """An n-dimensional float array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- autodiff ----------------------------------------------------------
    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; gradients accumulate into
        ``grad``, so repeated calls without ``zero_grad`` add up."""
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        # run the sweep on fresh buffers so pre-existing grads are not
        # re-propagated, then fold them back in (accumulate semantics)
        prior: dict[int, np.ndarray] = {}
        for node in topo:
            if node.grad is not None:
                prior[id(node)] = node.grad
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in topo:
            old = prior.get(id(node))
            if old is not None:
                node.grad = old if node.grad is None else node.grad + old

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.dtype)))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    """Build an op result, wiring the graph only when a parent needs grad."""
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward, "div")


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(2.0 * a.data * g)

    return _make(data, (a,), backward, "square")


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / (2.0 * data))

    return _make(data, (a,), backward, "sqrt")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), backward, "log")


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is defined as 0
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(data, (a,), backward, "relu")


# -- reductions & shape ------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _make(data, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(np.asarray(1.0 / count, dtype=a.dtype)))


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward, "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse all non-batch axes: (N, ...) -> (N, features)."""
    return reshape(a, (a.shape[0], -1))


def concat_channels(parts: list[Tensor]) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def backward(g):
        start = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[:, start:start + w])
            start += w

    return _make(data, tuple(parts), backward, "concat_channels")


def narrow_channels(a: Tensor, start: int, length: int) -> Tensor:
    data = a.data[:, start:start + length].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:start + length] = g
            a._accumulate(full)

    return _make(data, (a,), backward, "narrow_channels")


def permute_channels(a: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder axis-1 slices; ``perm`` must be a permutation of range(C)."""
    perm = np.asarray(perm, dtype=np.int64)
    data = a.data[:, perm]
    inv = np.argsort(perm)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, inv])

    return _make(data, (a,), backward, "permute_channels")


# -- dense layers -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias, with weight shaped (out_features, in_features)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear expects (N,in) x (out,in); got {x.shape} and {weight.shape}")
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, backward, "linear")


# -- convolution --------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"non-positive output size for input {size}, kernel {kernel}, "
            f"stride {stride}, padding {padding}")
    return out


def _patches(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> view (N,C,Ho,Wo,K,K) of sliding windows."""
    v = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def _scatter_patches(shape, gpatches: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Accumulate per-patch gradients back onto the padded input."""
    gxp = np.zeros(shape, dtype=gpatches.dtype)
    ho, wo = gpatches.shape[2], gpatches.shape[3]
    for i in range(kernel):
        for j in range(kernel):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                gpatches[:, :, :, :, i, j]
    return gxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N,C_in,H,W) with (C_out,C_in,K,K) filters."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    n, c_in, h, w = x.shape
    c_out, wc_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError("conv2d kernels must be square")
    if wc_in != c_in:
        raise ValueError(f"channel mismatch: input has {c_in}, weight expects {wc_in}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    # im2col + GEMM: (N*Ho*Wo, C_in*K*K) @ (C_in*K*K, C_out)
    cols = _patches(xp, k, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    data = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        if weight.requires_grad:
            weight._accumulate((g2.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c_in, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = _scatter_patches(xp.shape, gcols, k, stride)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            x._accumulate(gx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, backward, "conv2d")


def depthwise_conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Channelwise convolution: output channel c depends only on input channel c.

    ``kernel`` is shaped (C_in, K, K).
    """
    if x.ndim != 4 or kernel.ndim != 3:
        raise ValueError("depthwise_conv2d expects 4-D input and 3-D kernel")
    n, c, h, w = x.shape
    kc, k, k2 = kernel.shape
    if k != k2:
        raise ValueError("depthwise kernels must be square")
    if kc != c:
        raise ValueError(f"channel mismatch: input has {c}, kernel has {kc}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    pv = _patches(xp, k, stride)
    data = np.einsum("nchwij,cij->nchw", pv, kernel.data, optimize=True)
    if bias is not None:
        data = data + bias.data[None, :, None, None]

    def backward(g):
        if kernel.requires_grad:
            kernel._accumulate(np.einsum("nchwij,nchw->cij", pv, g, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gpatches = np.einsum("nchw,cij->nchwij", g, kernel.data, optimize=True)
            gxp = _scatter_patches(xp.shape, gpatches, k, stride)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            x._accumulate(gx)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(data, parents, backward, "depthwise_conv2d")


def max_pool2d(x: Tensor, window: int = 3, stride: int = 2, padding: int = 0) -> Tensor:
    """Max pooling; trailing rows/columns that do not fit a window are dropped."""
    if x.ndim != 4:
        raise ValueError("max_pool2d expects 4-D input")
    if padding >= window:
        raise ValueError("pooling padding must be smaller than the window")
    n, c, h, w = x.shape
    ho = conv_output_size(h, window, stride, padding)
    wo = conv_output_size(w, window, stride, padding)
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    pv = _patches(xp, window, stride).reshape(n, c, ho, wo, window * window)
    idx = pv.argmax(axis=-1)
    data = np.take_along_axis(pv, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        gflat = np.zeros((n, c, ho, wo, window * window), dtype=g.dtype)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gpatches = gflat.reshape(n, c, ho, wo, window, window)
        gxp = _scatter_patches(xp.shape, gpatches, window, stride)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        x._accumulate(gx)

    return _make(data, (x,), backward, "max_pool2d")


# -- normalization & softmax ---------------------------------------------------

def batch_norm2d(x: Tensor, scale: Tensor, shift: Tensor,
                 running_mean: Tensor, running_var: Tensor,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics are used and the running buffers are
    updated in place as (1 - momentum) * old + momentum * batch.
    """
    if x.ndim != 4:
        raise ValueError("batch_norm2d expects 4-D input")
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ValueError("batch_norm2d scale/shift must be per-channel vectors")
    if training:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mean
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * var
    else:
        mean = running_mean.data
        var = running_var.data
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    data = scale.data[None, :, None, None] * xhat + shift.data[None, :, None, None]

    def backward(g):
        if scale.requires_grad:
            scale._accumulate(np.sum(g * xhat, axis=(0, 2, 3)))
        if shift.requires_grad:
            shift._accumulate(np.sum(g, axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gxhat = g * scale.data[None, :, None, None]
        if training:
            # batch statistics are functions of x
            sum_gxhat = gxhat.sum(axis=(0, 2, 3))
            sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3))
            gx = (gxhat
                  - (sum_gxhat / m)[None, :, None, None]
                  - xhat * (sum_gxhat_xhat / m)[None, :, None, None])
            gx = gx * inv_std[None, :, None, None]
        else:
            gx = gxhat * inv_std[None, :, None, None]
        x._accumulate(gx)

    return _make(data, (x, scale, shift), backward, "batch_norm2d")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (g - dot))

    return _make(data, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, (x,), backward, "log_softmax")


# -- checkpoint I/O -------------------------------------------------------------

_CKPT_MAGIC = "parcnn-checkpoint-v1"


def save_checkpoint(prefix: str | Path, tensors: dict[str, Tensor | np.ndarray],
                    extra: dict | None = None) -> None:
    """Write ``prefix``.json (manifest) + ``prefix``.bin (little-endian f32 blob).

    The manifest lists, per tensor: shape and byte offset into the blob.
    Round-tripping float32 values is bit-exact. ``extra`` entries (for
    example the architecture description) are stored alongside.
    """
    prefix = Path(prefix)
    manifest: dict = {"format": _CKPT_MAGIC, "tensors": {}}
    if extra:
        manifest.update(extra)
    offset = 0
    chunks = []
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest["tensors"][name] = {"shape": list(arr.shape), "offset": offset}
        offset += len(blob)
        chunks.append(blob)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(prefix.with_suffix(prefix.suffix + ".json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(prefix.with_suffix(prefix.suffix + ".bin"), "wb") as f:
        f.write(b"".join(chunks))


def load_manifest(prefix: str | Path) -> dict:
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(prefix.suffix + ".json")
    if not manifest_path.exists():
        raise DataFormatError(f"checkpoint manifest not found: {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format") != _CKPT_MAGIC:
        raise DataFormatError(f"unrecognized checkpoint manifest: {manifest_path}")
    return manifest


def load_checkpoint(prefix: str | Path) -> dict[str, np.ndarray]:
    prefix = Path(prefix)
    manifest = load_manifest(prefix)
    blob_path = prefix.with_suffix(prefix.suffix + ".bin")
    if not blob_path.exists():
        raise DataFormatError(f"checkpoint blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    out: dict[str, np.ndarray] = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise DataFormatError(f"checkpoint blob truncated at tensor {name!r}")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape)
        out[name] = np.array(arr, dtype=np.float32)  # writable copy
    return out


# -- gradient checking ----------------------------------------------------------

def numeric_gradient(fn, tensors: list[Tensor], step: float = 1e-3) -> list[np.ndarray]:
    """Central finite differences of a scalar-valued ``fn`` w.r.t. each tensor.

    Runs entirely on the tensors' own dtype; use float64 tensors for tight
    tolerances.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads
