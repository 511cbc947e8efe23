"""Minimal reverse-mode differentiation on numpy arrays.

Only the operations the coarse-graining networks need are provided:
valid 1D convolution, leaky ReLU, batch normalization, dropout, softmax,
plus the small set of elementwise/reduction/linear-algebra ops used by
the losses.

Operations are recorded on the active :class:`Tape`::

    with Tape() as tape:
        y = softmax(conv1d(x, w, b))
        loss = y.sum()
    tape.backward(loss)      # fills w.grad, b.grad

Outside a tape (or when no input requires a gradient) ops simply compute.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "BatchNormStats", "no_tape",
    "conv1d", "leaky_relu", "batch_norm", "dropout", "softmax",
    "add", "mul", "neg", "log", "sum", "mean", "slice_time",
    "transpose", "reshape", "matmul", "logdet", "backward",
]


class TapeError(RuntimeError):
    pass


class Tensor:
    """An n-d array that may take part in reverse-mode differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        return backward(self)


@dataclass
class _Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str


class Tape:
    """Ordered record of executed operations.

    A tape can be run backward exactly once.
    """

    _local = threading.local()

    def __init__(self):
        self.nodes: list[_Node] = []
        self.names: list[str] = []
        self.used = False

    def __enter__(self) -> Tape:
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, node: _Node) -> None:
        if self.used:
            raise TapeError("tape already consumed by backward(); start a new forward pass")
        self.nodes.append(node)
        self.names.append(node.name)

    def op_names(self) -> list[str]:
        return list(self.names)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if self.used:
            raise TapeError("backward() called twice on the same tape")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        self.used = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.grad_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp._tape is None:
                    leaves[key] = inp
        for key, t in leaves.items():
            t.grad = grads[key]
        # nodes and their outputs point at each other; drop them now rather
        # than waiting for the cycle collector
        self.nodes = []
        return grads


def _tape_stack() -> list[Tape]:
    st = getattr(Tape._local, "stack", None)
    if st is None:
        st = Tape._local.stack = []
    return st


def _active_tape() -> Tape | None:
    st = _tape_stack()
    return st[-1] if st else None


class no_tape:
    """Context manager suspending recording (inference)."""

    def __enter__(self):
        self._saved = list(_tape_stack())
        _tape_stack().clear()

    def __exit__(self, *exc):
        _tape_stack().extend(self._saved)
        return False


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar ``loss`` into every leaf that requires grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TapeError("loss was not recorded on a tape")
    loss._tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: non-finite values in forward output")


def _emit(name: str, out: np.ndarray, inputs: Sequence[Tensor], grad_fn) -> Tensor:
    _check_finite(out, name)
    res = Tensor(out)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        res.requires_grad = True
        res._tape = tape
        tape.record(_Node(res, tuple(inputs), grad_fn, name))
    return res


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- network ops --------------------------------------------------------------

def _windows(x: np.ndarray, width: int) -> np.ndarray:
    # (B, C, T) -> (B, T_out, C*width), contiguous
    B, C, T = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, width, axis=2)  # B, C, T_out, W
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, T - width + 1, C * width)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid (unpadded) 1D convolution.

    ``out[b, o, t] = bias[o] + sum_{i, w} x[b, i, t + w] * kernel[o, i, w]``
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.ndim != 3 or kernel.ndim != 3 or bias.ndim != 1:
        raise ValueError(
            f"conv1d expects x[B,C,T], kernel[O,C,W], bias[O]; got {x.shape}, {kernel.shape}, {bias.shape}")
    B, C, T = x.shape
    O, Ck, W = kernel.shape
    if Ck != C:
        raise ValueError(f"conv1d: input has {C} channels but kernel expects {Ck}")
    if bias.shape[0] != O:
        raise ValueError(f"conv1d: bias length {bias.shape[0]} != output channels {O}")
    if W > T:
        raise ValueError(f"conv1d: kernel width {W} exceeds input length {T}")
    cols = _windows(x.data, W)                       # B, T', C*W
    kmat = kernel.data.reshape(O, C * W)
    out = (cols @ kmat.T).transpose(0, 2, 1) + bias.data[None, :, None]
    out = np.ascontiguousarray(out)
    Tp = T - W + 1

    def grad_fn(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1))  # B, T', O
        gk = gb = gx = None
        if kernel.requires_grad:
            gk = (gt.reshape(-1, O).T @ cols.reshape(-1, C * W)).reshape(O, C, W)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = (gt @ kmat).reshape(B, Tp, C, W)
            gx = np.zeros_like(x.data)
            for w in range(W):
                gx[:, :, w:w + Tp] += gcols[:, :, :, w].transpose(0, 2, 1)
        return gx, gk, gb

    return _emit("conv1d", out, (x, kernel, bias), grad_fn)


def leaky_relu(x: Tensor, alpha: float = 0.05) -> Tensor:
    """Elementwise ``max(x, alpha * x)``."""
    if alpha < 0:
        raise ValueError("leaky_relu: alpha must be >= 0")
    x = _as_tensor(x)
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return _emit("leaky_relu", x.data * slope, (x,), lambda g: (g * slope,))


@dataclass
class BatchNormStats:
    """Running per-channel statistics for batch normalization."""

    mean: np.ndarray
    var: np.ndarray
    steps: int = 0
    momentum: float = 0.1

    @classmethod
    def zeros(cls, channels: int, dtype=np.float64) -> BatchNormStats:
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


BN_EPS = 1e-5


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
               stats: BatchNormStats | None = None, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization over batch and time of ``x[B, C, T]``.

    In ``train`` mode the batch statistics are used and, if ``stats`` is
    given, folded into its running averages. ``infer`` uses ``stats``.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 3:
        raise ValueError(f"batch_norm expects x[B,C,T], got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({C},)")
    g_ = gamma.data[None, :, None]
    b_ = beta.data[None, :, None]

    if mode == "infer":
        if stats is None or stats.steps == 0:
            raise RuntimeError("batch_norm: infer mode requires running statistics from at least one training step")
        scale = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean[None, :, None]) * scale[None, :, None]
        out = g_ * xhat + b_

        def grad_infer(g):
            return (g * g_ * scale[None, :, None], (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2)))

        return _emit("batch_norm", out, (x, gamma, beta), grad_infer)
    if mode != "train":
        raise ValueError(f"batch_norm: unknown mode {mode!r}")

    n = x.shape[0] * x.shape[2]
    if n < 2:
        raise ValueError("batch_norm: train mode needs more than one value per channel")
    mu = x.data.mean(axis=(0, 2))
    xc = x.data - mu[None, :, None]
    var = (xc * xc).mean(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None]
    out = g_ * xhat + b_
    if stats is not None:
        m = stats.momentum
        stats.mean = (1 - m) * stats.mean + m * mu
        stats.var = (1 - m) * stats.var + m * var * n / (n - 1)
        stats.steps += 1

    def grad_train(g):
        gxhat = g * g_
        gx = inv[None, :, None] * (
            gxhat - gxhat.mean(axis=(0, 2), keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=(0, 2), keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return _emit("batch_norm", out, (x, gamma, beta), grad_train)


def dropout(x: Tensor, rate: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in ``infer`` mode or at ``rate == 0``."""
    if not 0 <= rate < 1:
        raise ValueError("dropout: rate must be in [0, 1)")
    x = _as_tensor(x)
    if mode == "infer" or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout: train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    """Softmax along ``axis`` (the class axis, 1 for ``[B, K, T]``)."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", p, (x,), grad_fn)


# -- elementwise, reductions, linear algebra ---------------------------------

def _pair(a, b) -> tuple[Tensor, Tensor]:
    # constants take the dtype of the tensor they meet
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(a, dtype=b.dtype)
    if not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return _as_tensor(a), _as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows where clamped."""
    a = _as_tensor(a)
    if floor > 0:
        clamped = a.data < floor
        safe = np.where(clamped, floor, a.data)
    else:
        clamped = None
        safe = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(safe)

    def grad_fn(g):
        gi = g / safe
        if clamped is not None:
            gi = np.where(clamped, 0.0, gi)
        return (gi,)

    return _emit("log", out, (a,), grad_fn)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", out, (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size // max(out.size, 1)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _emit("mean", out, (a,), grad_fn)


def slice_time(a, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]`` on the last (time) axis."""
    a = _as_tensor(a)
    T = a.shape[-1]
    if not (0 <= start <= stop <= T):
        raise IndexError(f"slice_time: [{start}:{stop}] outside time axis of length {T}")

    def grad_fn(g):
        gi = np.zeros_like(a.data)
        gi[..., start:stop] = g
        return (gi,)

    return _emit("slice_time", a.data[..., start:stop].copy(), (a,), grad_fn)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _emit("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a, b) -> Tensor:
    """2-d matrix product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _emit("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def logdet(a) -> Tensor:
    """Log-determinant of a symmetric positive-definite matrix (Cholesky)."""
    a = _as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"logdet: need a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a.data)):
        raise FloatingPointError("logdet: non-finite matrix")
    try:
        L = np.linalg.cholesky(a.data)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("logdet: matrix is not positive definite") from exc
    out = np.asarray(2.0 * np.log(np.diag(L)).sum())

    def grad_fn(g):
        Linv = np.linalg.inv(L)
        return (g * (Linv.T @ Linv),)

    return _emit("logdet", out, (a,), grad_fn)
