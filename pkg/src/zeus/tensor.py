"""Dense tensor with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and records, for every operation whose inputs
require gradients, a closure that propagates the output adjoint back to the
inputs. ``backward()`` on a scalar walks the recorded graph in reverse
topological order and accumulates (+=) gradients into every reachable leaf.

Layout is row-major throughout; images use the NCHW convention. Default
precision is 64-bit; 32-bit is supported for training speed (gradient checks
then need the looser tolerance tier, see ``finite_diff_check``).
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import InputError, ShapeError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values unchanged)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over the axes that numpy broadcasting expanded, back to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        # Leaves get an eagerly zeroed buffer so "grad of an untouched leaf is
        # zero" holds without special-casing; op outputs allocate lazily.
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # ---- basic introspection ----

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # ---- graph machinery ----

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; accumulates into leaf grads."""
        if self.data.size != 1:
            raise InputError(f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ---- elementwise arithmetic (broadcasting per numpy rules) ----

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._from_op(out_data, (self, other), bw)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._from_op(out_data, (self, other), bw)

    def __sub__(self, other):
        other = Tensor._lift(other)
        out_data = self.data - other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._from_op(out_data, (self, other), bw)

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out_data = self.data / other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data), other.shape))

        return Tensor._from_op(out_data, (self, other), bw)

    def __neg__(self):
        def bw(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._from_op(-self.data, (self,), bw)

    def __radd__(self, other):
        return Tensor._lift(other) + self

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __rmul__(self, other):
        return Tensor._lift(other) * self

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise InputError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(out_data, (self,), bw)

    # ---- elementwise nonlinearities ----

    def exp(self):
        out_data = np.exp(self.data)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * out_data)

        return Tensor._from_op(out_data, (self,), bw)

    def log(self):
        out_data = np.log(self.data)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        return Tensor._from_op(out_data, (self,), bw)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (self,), bw)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._from_op(out_data, (self,), bw)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (self,), bw)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > 0))

        return Tensor._from_op(out_data, (self,), bw)

    def gelu(self):
        # exact form: 0.5 x (1 + erf(x/sqrt(2)))
        cdf = 0.5 * (1.0 + erf(self.data * _INV_SQRT2))
        out_data = self.data * cdf

        def bw(g):
            if self.requires_grad:
                pdf = _INV_SQRT_2PI * np.exp(-0.5 * self.data * self.data)
                self._accumulate(g * (cdf + self.data * pdf))

        return Tensor._from_op(out_data, (self,), bw)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes through only where unclipped."""
        out_data = np.clip(self.data, lo, hi)

        def bw(g):
            if self.requires_grad:
                inside = (self.data > lo) & (self.data < hi)
                self._accumulate(g * inside)

        return Tensor._from_op(out_data, (self,), bw)

    # ---- reductions and reshaping ----

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._from_op(out_data, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        orig = self.shape

        def bw(g):
            if self.requires_grad:
                self._accumulate(g.reshape(orig))

        return Tensor._from_op(out_data, (self,), bw)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out_data = self.data.transpose(axes)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inv))

        return Tensor._from_op(out_data, (self,), bw)

    # ---- linear algebra ----

    def matmul(self, other):
        """Matrix product; batched per numpy @ semantics on stacked matrices."""
        other = Tensor._lift(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul requires >=2-d operands, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner dimensions disagree: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def bw(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor._from_op(out_data, (self, other), bw)

    def __matmul__(self, other):
        return self.matmul(other)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor._lift(a).matmul(b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max-subtraction for stability."""
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (g - inner))

    return Tensor._from_op(out_data, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise InputError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = gamma.data * xhat + beta.data

    def bw(g):
        dxhat = g * gamma.data
        if x.requires_grad:
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((dxhat - m1 - xhat * m2) * inv_std)
        reduce_axes = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast((g * xhat).sum(axis=reduce_axes), gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g.sum(axis=reduce_axes), beta.shape))

    return Tensor._from_op(out_data, (x, gamma, beta), bw)


# ---- convolutions (NCHW) ----

def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-accumulate patches back onto the image."""
    n, c, h, w = x_shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of x:(N,C,H,W) with w:(O,C,kh,kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input {(h + 2 * padding, wd + 2 * padding)}")
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(wd, kw, stride, padding)
    cols = _im2col(x.data, kh, kw, stride, padding)            # (N, C*kh*kw, Ho*Wo)
    wmat = w.data.reshape(o, -1)                               # (O, C*kh*kw)
    out_data = (wmat @ cols).reshape(n, o, ho, wo)

    def bw(g):
        gmat = g.reshape(n, o, ho * wo)
        if w.requires_grad:
            gw = np.einsum("nol,nkl->ok", gmat, cols)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            gcols = wmat.T @ gmat                              # (N, C*kh*kw, Ho*Wo)
            x._accumulate(_col2im(gcols, x.shape, kh, kw, stride, padding))

    return Tensor._from_op(out_data, (x, w), bw)


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 2) -> Tensor:
    """Transposed convolution of x:(N,C,H,W) with w:(C,O,kh,kw).

    Scatter-accumulate semantics: each input pixel paints a stride-spaced
    kh*kw patch of the output. With kernel == stride == 2 the spatial size
    exactly doubles.
    """
    if stride <= 0:
        raise InputError("conv_transpose2d stride must be positive")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    cw, o, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    ho = (h - 1) * stride + kh
    wo = (wd - 1) * stride + kw
    wmat = w.data.reshape(c, -1)                               # (C, O*kh*kw)
    xmat = x.data.reshape(n, c, h * wd)
    cols = wmat.T @ xmat                                       # (N, O*kh*kw, H*W)
    out_data = _col2im(cols, (n, o, ho, wo), kh, kw, stride, 0)

    def bw(g):
        gcols = _im2col(g, kh, kw, stride, 0)                  # (N, O*kh*kw, H*W)
        if x.requires_grad:
            gx = wmat @ gcols
            x._accumulate(gx.reshape(x.shape))
        if w.requires_grad:
            gw = np.einsum("ncl,nkl->ck", xmat, gcols)
            w._accumulate(gw.reshape(w.shape))

    return Tensor._from_op(out_data, (x, w), bw)


# ---- gradient verification ----

@dataclass
class FiniteDiffReport:
    """Outcome of comparing autodiff gradients against central differences."""

    passed: bool
    max_rel_error: float
    n_checked: int
    rel_errors: dict = field(repr=False, default_factory=dict)  # flat index -> rel error

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} over {self.n_checked} coordinates"


def finite_diff_check(f, x: Tensor, h: float = 1e-5, rel_tol: float = 1e-4,
                      max_checks: int | None = None, rng: np.random.Generator | None = None) -> FiniteDiffReport:
    """Compare autodiff grad of scalar-valued ``f`` at ``x`` to central differences.

    ``f`` must be deterministic. Checks every coordinate of x unless
    ``max_checks`` caps it (then a seeded random subset is used). The relative
    error for a coordinate is |num - ad| / max(|num|, |ad|, 1e-6).
    """
    if not x.requires_grad:
        raise InputError("finite_diff_check requires x.requires_grad")
    x.zero_grad()
    out = f(x)
    if out.size != 1:
        raise InputError("finite_diff_check requires a scalar-valued function")
    out.backward()
    ad = x.grad.reshape(-1).copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    n = flat.size
    if max_checks is not None and max_checks < n:
        rng = rng or np.random.default_rng(0)
        indices = rng.choice(n, size=max_checks, replace=False)
    else:
        indices = np.arange(n)

    errors: dict = {}
    max_err = 0.0
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            denom = max(abs(num), abs(ad[i]), 1e-6)
            err = abs(num - ad[i]) / denom
            errors[int(i)] = err
            if err > max_err:
                max_err = err
    return FiniteDiffReport(passed=max_err < rel_tol, max_rel_error=max_err,
                            n_checked=len(indices), rel_errors=errors)


# ---- serialization (.zt: one JSON header line, then raw little-endian data) ----

_DTYPE_CODES = {"float64": "<f8", "float32": "<f4", "uint8": "|u1"}


def save_zt(t: Tensor | np.ndarray, path) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    name = arr.dtype.name
    if name not in _DTYPE_CODES:
        raise InputError(f"unsupported dtype for .zt: {name}")
    header = json.dumps({"dtype": name, "shape": list(arr.shape)})
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(arr).astype(_DTYPE_CODES[name]).tobytes())


def load_zt(path) -> Tensor:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    arr = np.frombuffer(raw, dtype=_DTYPE_CODES[header["dtype"]]).reshape(header["shape"])
    return Tensor(arr.astype(header["dtype"], copy=True))
