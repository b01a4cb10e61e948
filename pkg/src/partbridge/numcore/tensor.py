"""Dense tensors with reverse-mode autodiff on an explicit tape.

Every differentiable primitive lives here. Results are recorded on the
active tape only while a ``Tape`` context is open and some input requires
grad; ``Tape.backward`` then replays the records in exact reverse creation
order, which makes gradients deterministic for a fixed op sequence.
"""

from __future__ import annotations

import numpy as np

# When True every primitive checks its output for NaN/Inf. Slow; meant for
# tests and debugging, not training loops.
DEBUG_CHECK_FINITE = False


class ShapeError(ValueError):
    """Operands have incompatible shapes for the named op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


class NonFiniteError(FloatingPointError):
    """A tensor picked up NaN/Inf entries."""


_ACTIVE_TAPE = None


class Tape:
    """Ordered record of primitive ops; backward walks it back to front."""

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad leaf."""
        if loss.data.ndim != 0:
            raise ShapeError("backward(loss)", loss.data.shape)
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, ig in zip(inputs, backward_fn(g)):
                if ig is None or not inp.tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                    tensors[key] = inp
        for key, g in grads.items():
            t = tensors[key]
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g


class Tensor:
    """N-d array plus grad bookkeeping. Data is never mutated once taped."""

    __slots__ = ("data", "requires_grad", "grad", "tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.tracked = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flags = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flags})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _finite(arr: np.ndarray, op: str) -> None:
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(op: str, data: np.ndarray, inputs, backward_fn) -> Tensor:
    _finite(data, op)
    out = Tensor(data, dtype=data.dtype)
    if _ACTIVE_TAPE is not None and any(t.tracked for t in inputs):
        out.tracked = True
        _ACTIVE_TAPE.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (reverses numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b) -> Tensor:
    a, b = (a, _wrap(b, a.dtype)) if isinstance(a, Tensor) else (_wrap(a, b.dtype), b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _make("add", data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return _make("sub", data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    return _make("mul", data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = a.data @ b.data
    return _make("matmul", data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def square(x: Tensor) -> Tensor:
    return _make("square", x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)
    return _make("sqrt", r, (x,), lambda g: (g * (0.5 / r),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _make("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))  # overflow-safe on both tails
    s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, x.data.dtype.type(1.0), x.data.dtype.type(alpha))
    return _make("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None) -> Tensor:
    axes = _axis_tuple(axis, x.data.ndim)
    data = x.data.sum(axis=axes)

    def bwd(g):
        ge = np.expand_dims(g, axes) if g.ndim else g
        return (np.broadcast_to(ge, x.shape).astype(x.dtype, copy=False) * np.ones((), x.dtype),)

    return _make("sum", data, (x,), bwd)


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _axis_tuple(axis, x.data.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    data = x.data.mean(axis=axes)

    def bwd(g):
        ge = np.expand_dims(g, axes) if g.ndim else g
        scale = np.asarray(1.0 / count, dtype=x.dtype)
        return (np.broadcast_to(ge, x.shape) * scale,)

    return _make("mean", data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _make("reshape", data, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].data.ndim
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(sizes)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _make("concat", data, tuple(tensors), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = axis % x.data.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow(axis={axis}, start={start}, len={length})", x.shape)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        full[sl] = g
        return (full,)

    return _make("narrow", x.data[sl].copy(), (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    return _make("softmax", s, (x,), bwd)


def softmax_cross_entropy(logits: Tensor, onehot: Tensor) -> Tensor:
    """Per-row cross entropy of softmax(logits) against one-hot targets."""
    if logits.shape != onehot.shape:
        raise ShapeError("softmax_cross_entropy", logits.shape, onehot.shape)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    data = -(onehot.data * logp).sum(axis=-1)
    probs = np.exp(logp)

    def bwd(g):
        return ((probs - onehot.data) * g[..., None], None)

    return _make("softmax_cross_entropy", data, (logits, onehot), bwd)


# ---------------------------------------------------------------------------
# image primitives: channels-last (B, H, W, C) layout throughout


def pad2d(x: Tensor, k: int, mode: str = "zero") -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError("pad2d", x.shape)
    np_mode = {"zero": "constant", "reflect": "symmetric"}[mode]
    data = np.pad(x.data, ((0, 0), (k, k), (k, k), (0, 0)), mode=np_mode)

    def bwd(g):
        if mode == "zero":
            return (g[:, k:-k, k:-k, :],)
        # edge-mirrored padding: fold borders back onto their source rows/cols
        gx = g.copy()
        gx[:, k:2 * k] += gx[:, k - 1::-1]
        gx[:, -2 * k:-k] += gx[:, :-k - 1:-1]
        gx = gx[:, k:-k]
        gx[:, :, k:2 * k] += gx[:, :, k - 1::-1]
        gx[:, :, -2 * k:-k] += gx[:, :, :-k - 1:-1]
        return (gx[:, :, k:-k],)

    return _make("pad2d", data, (x,), bwd)


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Valid 2-D convolution (cross-correlation); w is (kh, kw, C, O).

    Implemented as one GEMM per kernel offset over the channel dim, which
    beats im2col at the small channel counts used here.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape)
    B, H, W, C = x.shape
    kh, kw, _, O = w.shape
    if kh > H or kw > W:
        raise ShapeError("conv2d", x.shape, w.shape)
    OH, OW = H - kh + 1, W - kw + 1
    offsets = [(dy, dx) for dy in range(kh) for dx in range(kw)]

    if C == 1 and O == 1:
        # fixed-kernel blur path: pure shifted multiply-adds
        xs = x.data[:, :, :, 0]
        acc = np.zeros((B, OH, OW), dtype=x.dtype)
        for dy, dx in offsets:
            acc += w.data[dy, dx, 0, 0] * xs[:, dy:dy + OH, dx:dx + OW]
        data = acc[..., None]

        def bwd(g):
            gs = g[:, :, :, 0]
            gx = np.zeros_like(x.data)
            gw = np.zeros_like(w.data)
            for dy, dx in offsets:
                gx[:, dy:dy + OH, dx:dx + OW, 0] += w.data[dy, dx, 0, 0] * gs
                gw[dy, dx, 0, 0] = np.vdot(xs[:, dy:dy + OH, dx:dx + OW], gs)
            return gx, gw

        return _make("conv2d", data, (x, w), bwd)

    slabs = [np.ascontiguousarray(x.data[:, dy:dy + OH, dx:dx + OW, :]).reshape(-1, C)
             for dy, dx in offsets]
    acc = np.zeros((B * OH * OW, O), dtype=x.dtype)
    for slab, (dy, dx) in zip(slabs, offsets):
        acc += slab @ w.data[dy, dx]
    data = acc.reshape(B, OH, OW, O)

    def bwd(g):
        gmat = g.reshape(B * OH * OW, O)
        gw = np.empty_like(w.data)
        gx = np.zeros_like(x.data)
        for slab, (dy, dx) in zip(slabs, offsets):
            gw[dy, dx] = slab.T @ gmat
            gx[:, dy:dy + OH, dx:dx + OW, :] += (gmat @ w.data[dy, dx].T).reshape(B, OH, OW, C)
        return gx, gw

    return _make("conv2d", data, (x, w), bwd)


def avg_pool2x(x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError("avg_pool2x", x.shape)
    B, H, W, C = x.shape
    data = x.data.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))

    def bwd(g):
        scale = np.asarray(0.25, dtype=x.dtype)
        return (np.repeat(np.repeat(g * scale, 2, axis=1), 2, axis=2),)

    return _make("avg_pool2x", data, (x,), bwd)


def upsample2x(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError("upsample2x", x.shape)
    B, H, W, C = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        return (g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)),)

    return _make("upsample2x", data, (x,), bwd)
