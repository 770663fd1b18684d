"""Minimal N-d tensor with reverse-mode autodiff on a numpy backend.

Conventions, fixed once for the whole project:

* Convolutions use the cross-correlation convention (no kernel flip).
* Broadcasting is restricted to scalars and same-rank shapes where each
  axis extent matches or is 1.
* Numeric width is a run-level switch: float32 by default, float64 for
  gradient checking (see ``set_default_dtype`` / ``autocast64``).
* The RNG is a counter-based splitmix64 (seed + i * golden-gamma, then the
  standard 64-bit finalizer), so identical seeds give identical streams on
  every platform.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import special


def _tune_allocator() -> None:
    """Keep large buffers in the malloc arena instead of mmap/munmap cycles.

    glibc hands every allocation above ~128 KiB straight to mmap and unmaps
    it on free, so each fresh activation buffer pays soft page faults again.
    Raising the thresholds lets freed buffers be reused, which is worth about
    2x on the conv-heavy training step.  No-op on non-glibc platforms.
    """
    try:
        import ctypes
        libc = ctypes.CDLL(None)
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(m_mmap_threshold, 1 << 30)
        libc.mallopt(m_trim_threshold, 1 << 30)
    except (OSError, AttributeError):
        pass


_tune_allocator()


class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""


_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ContractViolation(f"unsupported dtype {dtype}")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def autocast64():
    """Temporarily switch newly created tensors to 64-bit."""
    global _default_dtype
    old = _default_dtype
    _default_dtype = np.float64
    try:
        yield
    finally:
        _default_dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / oracles)."""
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


class Tensor:
    """An n-d array plus an optional backward closure linking it to its inputs.

    The computation record is the implicit DAG of ``_parents`` links; calling
    ``backward()`` on a scalar topologically sorts that DAG and replays the
    stored closures in reverse.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: tuple = ()

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray, own: bool = False) -> None:
        # own=True promises g is freshly allocated and aliased nowhere else,
        # so the first accumulation can adopt it without copying
        if self.grad is None:
            if own and g.dtype == self.data.dtype and g.shape == self.data.shape:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    # -- backward ------------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractViolation("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # interior grads are scratch; free everything that is not a leaf
        for node in topo:
            if node._parents:
                node.grad = None
                node._backward = None
                node._parents = ()

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def permute(self, *axes):
        return permute(self, axes if len(axes) > 1 else axes[0])

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype or _default_dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = req
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_broadcast(sa: tuple, sb: tuple) -> None:
    if sa == sb or len(sa) == 0 or len(sb) == 0:
        return
    if len(sa) != len(sb):
        raise ContractViolation(f"broadcast requires same rank or scalar: {sa} vs {sb}")
    for a, b in zip(sa, sb):
        if a != b and a != 1 and b != 1:
            raise ContractViolation(f"shapes not broadcastable: {sa} vs {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape), own=True)
        b._accumulate(_unbroadcast(g, b.shape), own=False)

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data - b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape), own=True)
        b._accumulate(_unbroadcast(-g, b.shape), own=True)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data * b.data

    def backward(g):
        ga = g * b.data
        a._accumulate(_unbroadcast(ga, a.shape), own=True)
        gb = g * a.data
        b._accumulate(_unbroadcast(gb, b.shape), own=True)

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape), own=True)
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape), own=True)

    return _make(data, (a, b), backward)


def elementwise(a, b, kind: str) -> Tensor:
    """Dispatch form used by tests; kind in {"add", "sub", "mul"}."""
    try:
        return {"add": add, "sub": sub, "mul": mul}[kind](a, b)
    except KeyError:
        raise ContractViolation(f"unknown elementwise kind {kind!r}") from None


def abs_(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data), own=True)

    return _make(data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-function GELU, x * Phi(x)."""
    x = a.data
    phi = special.erf(x * x.dtype.type(1.0 / np.sqrt(2.0)))
    phi += 1.0
    phi *= 0.5
    data = x * phi

    def backward(g):
        d = x * x
        d *= -0.5
        np.exp(d, out=d)
        d *= x.dtype.type(1.0 / np.sqrt(2.0 * np.pi))
        d *= x
        d += phi
        d *= g
        a._accumulate(d, own=True)

    return _make(data, (a,), backward)


# -- shape manipulation --------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if int(np.prod(shape)) != a.size:
        raise ContractViolation(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(old), own=True)

    return _make(data, (a,), backward)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ContractViolation(f"invalid permutation {axes} for rank {a.ndim}")
    inv = np.argsort(axes)
    data = a.data.transpose(axes)

    def backward(g):
        a._accumulate(np.ascontiguousarray(g.transpose(inv)), own=True)

    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [(_as_tensor(t)) for t in tensors]
    if not tensors:
        raise ContractViolation("concat of an empty list")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        s[axis] = ref[axis]
        if s != ref:
            raise ContractViolation(f"concat extents mismatch: {t.shape} vs {tensors[0].shape}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(np.ascontiguousarray(piece), own=True)

    return _make(data, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    if start < 0 or start + length > a.shape[axis]:
        raise ContractViolation(f"narrow out of range on axis {axis}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        a._accumulate(buf, own=True)

    return _make(data, (a,), backward)


def reflect_pad2d(a: Tensor, pads: tuple) -> Tensor:
    """Reflect-pad the trailing two axes by (top, bottom, left, right)."""
    pt, pb, pl, pr = pads
    h, w = a.shape[-2], a.shape[-1]
    if max(pt, pb) >= h or max(pl, pr) >= w:
        raise ContractViolation("reflect pad wider than the image")
    rows = np.concatenate([np.arange(pt, 0, -1), np.arange(h), np.arange(h - 2, h - 2 - pb, -1)])
    cols = np.concatenate([np.arange(pl, 0, -1), np.arange(w), np.arange(w - 2, w - 2 - pr, -1)])
    data = a.data[..., rows, :][..., :, cols]

    def backward(g):
        buf = np.zeros(a.shape[:-2] + (h + pt + pb, w), dtype=g.dtype)
        np.add.at(buf, (Ellipsis, slice(None), cols), g)
        out = np.zeros_like(a.data)
        np.add.at(out, (Ellipsis, rows, slice(None)), buf)
        a._accumulate(out)

    return _make(data, (a,), backward)


# -- reductions ----------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(ax % ndim if -ndim <= ax < ndim else ax for ax in axes)
    if len(set(axes)) != len(axes) or any(ax < 0 or ax >= ndim for ax in axes):
        raise ContractViolation(f"invalid reduction axes {axes} for rank {ndim}")
    return tuple(sorted(axes))


def reduce_sum(a: Tensor, axes=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    if not axes:
        return a
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.shape).copy(), own=True)

    return _make(data, (a,), backward)


def reduce_mean(a: Tensor, axes=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    if not axes:
        return a
    count = int(np.prod([a.shape[ax] for ax in axes]))
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g / count, a.shape).copy(), own=True)

    return _make(data, (a,), backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul requires rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul inner extents differ: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        a._accumulate(_unbroadcast(ga, a.shape), own=True)
        b._accumulate(_unbroadcast(gb, b.shape), own=True)

    return _make(data, (a, b), backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ContractViolation(f"softmax axis {axis} out of range")
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - dot), own=True)

    return _make(data, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine scale/shift."""
    c = a.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractViolation(f"layer_norm affine shape mismatch for C={c}")
    if eps <= 0:
        raise ContractViolation("layer_norm eps must be positive")
    mu = a.data.mean(axis=-1, keepdims=True)
    xm = a.data - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xm * ivar
    data = gamma.data * xhat + beta.data

    def backward(g):
        beta._accumulate(_unbroadcast(g, beta.shape))
        gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        a._accumulate(ivar * (dxhat - m1 - xhat * m2), own=True)

    return _make(data, (a, gamma, beta), backward)


# -- convolutions --------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation, NCHW layout, zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractViolation("conv2d expects NCHW input and OIHW weight")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ContractViolation(
            f"conv2d group mismatch: cin={cin}, cout={cout}, groups={groups}, weight={weight.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ContractViolation("conv2d kernel larger than padded input")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if padding:
        xp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data
    cog = cout // groups
    kk = kh * kw
    depthwise = groups == cin and cout == cin and cin_g == 1
    if depthwise and kk > 1:
        return _conv2d_depthwise(x, weight, bias, stride, padding,
                                 n, cin, h, w, kh, kw, hp, wp, ho, wo, xp)
    pointwise = kk == 1 and stride == 1 and padding == 0
    # im2col to [n, g, cin_g*kh*kw, ho*wo], then one batched gemm
    if pointwise:
        slices = None
        cols = x.data.reshape(n, groups, cin_g, ho * wo)
    else:
        xg = xp.reshape(n, groups, cin_g, hp, wp)
        cols = np.empty((n, groups, cin_g, kk, ho, wo), dtype=x.dtype)
        slices = []
        idx = 0
        for ki in range(kh):
            for kj in range(kw):
                sl = (slice(ki, ki + (ho - 1) * stride + 1, stride),
                      slice(kj, kj + (wo - 1) * stride + 1, stride))
                slices.append(sl)
                cols[:, :, :, idx] = xg[:, :, :, sl[0], sl[1]]
                idx += 1
        cols = cols.reshape(n, groups, cin_g * kk, ho * wo)
    w2 = weight.data.reshape(groups, cog, cin_g * kk)
    out = np.matmul(w2, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        if bias.shape != (cout,):
            raise ContractViolation("conv2d bias shape mismatch")
        out += bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gg = g.reshape(n, groups, cog, ho * wo)
        if groups == 1:
            # per-sample 2-d gemms hit BLAS with a transpose flag and avoid
            # the large contiguous copy tensordot would make of `cols`
            g0, c0 = gg[:, 0], cols[:, 0]
            gw = np.dot(g0[0], c0[0].T)
            for i in range(1, n):
                gw += np.dot(g0[i], c0[i].T)
        else:
            gw = np.matmul(gg, cols.swapaxes(2, 3)).sum(axis=0)
        weight._accumulate(gw.reshape(weight.shape), own=True)
        gcols = np.matmul(w2.swapaxes(1, 2), gg)  # [n, g, cin_g*kk, ho*wo]
        if pointwise:
            x._accumulate(gcols.reshape(x.shape), own=True)
        else:
            gcols = gcols.reshape(n, groups, cin_g, kk, ho, wo)
            gxp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
            gxg = gxp.reshape(n, groups, cin_g, hp, wp)
            for idx, sl in enumerate(slices):
                gxg[:, :, :, sl[0], sl[1]] += gcols[:, :, :, idx]
            if padding:
                x._accumulate(gxp[:, :, padding:padding + h, padding:padding + w],
                              own=True)
            else:
                x._accumulate(gxp, own=True)
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2, 3)), own=True)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def _conv2d_depthwise(x, weight, bias, stride, padding,
                      n, c, h, w, kh, kw, hp, wp, ho, wo, xp):
    """Shift-multiply path for per-channel kernels (much cheaper than im2col)."""
    slices = []
    for ki in range(kh):
        for kj in range(kw):
            slices.append((ki, kj,
                           (slice(ki, ki + (ho - 1) * stride + 1, stride),
                            slice(kj, kj + (wo - 1) * stride + 1, stride))))
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for ki, kj, sl in slices:
        out += weight.data[:, 0, ki, kj].reshape(1, c, 1, 1) * xp[:, :, sl[0], sl[1]]
    if bias is not None:
        if bias.shape != (c,):
            raise ContractViolation("conv2d bias shape mismatch")
        out += bias.data.reshape(1, c, 1, 1)

    def backward(g):
        gw = np.empty_like(weight.data)
        for ki, kj, sl in slices:
            gw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", g, xp[:, :, sl[0], sl[1]])
        weight._accumulate(gw, own=True)
        gxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
        for ki, kj, sl in slices:
            gxp[:, :, sl[0], sl[1]] += weight.data[:, 0, ki, kj].reshape(1, c, 1, 1) * g
        if padding:
            x._accumulate(gxp[:, :, padding:padding + h, padding:padding + w],
                          own=True)
        else:
            x._accumulate(gxp, own=True)
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2, 3)), own=True)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Transposed 2-d correlation (adjoint of conv2d with the same geometry)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractViolation("conv_transpose2d expects NCHW input and IOHW weight")
    if stride < 1:
        raise ContractViolation("conv_transpose2d stride must be >= 1")
    n, cin, h, w = x.shape
    cin_w, cout, kh, kw = weight.shape
    if cin_w != cin:
        raise ContractViolation(f"conv_transpose2d channel mismatch: {x.shape} vs {weight.shape}")
    ho = (h - 1) * stride + kh
    wo = (w - 1) * stride + kw
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    xflat = x.data.reshape(n, cin, h * w)
    slices = []
    for ki in range(kh):
        for kj in range(kw):
            sl = (slice(ki, ki + (h - 1) * stride + 1, stride),
                  slice(kj, kj + (w - 1) * stride + 1, stride))
            slices.append((ki, kj, sl))
            piece = np.matmul(weight.data[:, :, ki, kj].T, xflat)
            out[:, :, sl[0], sl[1]] += piece.reshape(n, cout, h, w)

    def backward(g):
        gw = np.zeros_like(weight.data)
        gx = np.zeros_like(xflat)
        for ki, kj, sl in slices:
            piece = np.ascontiguousarray(g[:, :, sl[0], sl[1]]).reshape(n, cout, h * w)
            gwk = gw[:, :, ki, kj]
            for i in range(n):
                gwk += np.dot(xflat[i], piece[i].T)
            gx += np.matmul(weight.data[:, :, ki, kj], piece)
        weight._accumulate(gw, own=True)
        x._accumulate(gx.reshape(x.shape), own=True)

    return _make(out, (x, weight), backward)


# -- deterministic RNG ---------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(states: np.ndarray) -> np.ndarray:
    z = states
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Prng:
    """Counter-based splitmix64 generator; identical streams on any platform."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = np.uint64(0)

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = self.counter + np.arange(1, n + 1, dtype=np.uint64)
            self.counter += np.uint64(n)
            states = self.seed + idx * _GAMMA
            return _splitmix64(states)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) with 53-bit resolution."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def randint(self, n: int, bound: int) -> np.ndarray:
        return (self._raw(n) % np.uint64(bound)).astype(np.int64)

    def normal(self, shape, std: float = 1.0, dtype=None) -> np.ndarray:
        """Box-Muller normals from the uniform stream."""
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        theta = 2.0 * np.pi * u2
        vals = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:count]
        return (std * vals).reshape(shape).astype(dtype or _default_dtype)

    def fork(self, tag: int) -> "Prng":
        """Independent substream keyed by (seed, tag)."""
        mask = 0xFFFFFFFFFFFFFFFF
        z = (int(self.seed) + (tag * 0xBF58476D1CE4E5B9)) & mask
        z ^= z >> 30
        z = (z * 0xBF58476D1CE4E5B9) & mask
        z ^= z >> 27
        z = (z * 0x94D049BB133111EB) & mask
        z ^= z >> 31
        return Prng(z)


# -- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moment buffers."""
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data))


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState,
              lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place."""
    if grad.shape != param.data.shape or state.m.shape != param.data.shape:
        raise ContractViolation("adam_step shape mismatch")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1 ** state.t)
    vhat = state.v / (1.0 - beta2 ** state.t)
    param.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.data.dtype)


class Adam:
    """Adam over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {name: AdamState.zeros_like(p) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p, p.grad, self.state[name],
                      lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# -- finite-difference oracle --------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function, elementwise."""
    if h <= 0:
        raise ContractViolation("finite_diff_grad needs h > 0")
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x))
            flat[i] = orig - h
            fm = float(f(x))
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError("non-finite function value in finite_diff_grad")
            gflat[i] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_grad_sampled(f: Callable[[Tensor], float], x: Tensor,
                             indices: Iterable[int], h: float = 1e-4) -> dict:
    """Central differences at selected flat indices only (large tensors)."""
    out = {}
    flat = x.data.reshape(-1)
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x))
            flat[i] = orig - h
            fm = float(f(x))
            flat[i] = orig
            out[int(i)] = (fp - fm) / (2.0 * h)
    return out
