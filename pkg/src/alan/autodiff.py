"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every op records its parents and a closure that pushes the output gradient
back to them. Graphs are only recorded when at least one input requires a
gradient, so inference under ``no_grad`` (or on plain arrays) costs no more
than the underlying numpy calls.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

class _Mode(threading.local):
    # per thread, so concurrent samplers and trainers do not clobber each other
    grad_enabled = True
    dtype = np.dtype(np.float64)


_MODE = _Mode()


@contextlib.contextmanager
def no_grad():
    prev = _MODE.grad_enabled
    _MODE.grad_enabled = False
    try:
        yield
    finally:
        _MODE.grad_enabled = prev


@contextlib.contextmanager
def default_dtype(dtype):
    """Dtype used when plain arrays enter the graph (per thread)."""
    prev = _MODE.dtype
    _MODE.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _MODE.dtype = prev


def get_default_dtype() -> np.dtype:
    return _MODE.dtype


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=_MODE.dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- conveniences -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph --------------------------------------------------------
    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        seed = np.asarray(grad, dtype=self.data.dtype)
        grads: dict[int, np.ndarray] = {id(self): np.broadcast_to(seed, self.data.shape).copy()}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    if _MODE.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data + b.data, (a, b), lambda g: ((a, unbroadcast(g, sa)), (b, unbroadcast(g, sb))))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data - b.data, (a, b), lambda g: ((a, unbroadcast(g, sa)), (b, unbroadcast(-g, sb))))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: ((a, unbroadcast(g * bd, ad.shape)), (b, unbroadcast(g * ad, bd.shape))),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: ((a, unbroadcast(g / bd, ad.shape)), (b, unbroadcast(-g * out / bd, bd.shape))),
    )


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad**p, (a,), lambda g: ((a, g * p * ad ** (p - 1)),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: ((a, 2.0 * g * ad),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: ((a, g * out),))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: ((a, g / ad),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: ((a, g * (1.0 - out * out)),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return _make(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _make(out, (a,), lambda g: ((a, g * _sigmoid_np(ad)),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    mask = ad > 0
    return _make(ad * mask, (a,), lambda g: ((a, g * mask),))


def elu(a: Tensor) -> Tensor:
    ad = a.data
    neg = np.expm1(np.minimum(ad, 0.0))
    out = np.where(ad > 0, ad, neg)
    return _make(out, (a,), lambda g: ((a, g * np.where(ad > 0, 1.0, neg + 1.0)),))


def maximum(a: Tensor, floor: float) -> Tensor:
    """``max(a, floor)`` with a constant floor; gradient flows only above it."""
    ad = a.data
    mask = ad > floor
    return _make(np.where(mask, ad, floor), (a,), lambda g: ((a, g * mask),))


# -- reductions and shape ---------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, shape)),)

    return _make(np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(old)),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: ((a, np.transpose(g, inv)),))


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.data.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        return ((a, full),)

    return _make(a.data[idx], (a,), back)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(zip(ts, np.split(g, splits, axis=axis)))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple((t, np.take(g, i, axis=axis)) for i, t in enumerate(ts))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, back)


# -- linear algebra -----------------------------------------------------------


def _outer_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of ``x @ w`` w.r.t. ``w``; a 1-D ``x`` is a single row."""
    if x.ndim == 1:
        return np.outer(x, g)
    return np.swapaxes(x, -1, -2) @ g


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = _outer_grad(ad, g)
        return ((a, unbroadcast(ga, ad.shape)), (b, unbroadcast(gb, bd.shape)))

    return _make(ad @ bd, (a, b), back)


def linear(x, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b``; ``w`` may carry a leading ensemble axis."""
    x = as_tensor(x)
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def back(g):
        gx = g @ np.swapaxes(wd, -1, -2)
        gw = _outer_grad(xd, g)
        return (
            (x, unbroadcast(gx, xd.shape)),
            (w, unbroadcast(gw, wd.shape)),
            (b, unbroadcast(g, b.data.shape)),
        )

    return _make(out, (x, w, b), back)


# -- losses -------------------------------------------------------------------


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise Bernoulli negative log-likelihood from logits."""
    ld = logits.data
    target = np.asarray(target, dtype=ld.dtype)
    out = np.logaddexp(0.0, ld) - target * ld
    return _make(out, (logits,), lambda g: ((logits, g * (_sigmoid_np(ld) - target)),))


def gaussian_kl(mq: Tensor, sq: Tensor, mp: Tensor, sp: Tensor) -> Tensor:
    """Elementwise KL(N(mq, sq^2) || N(mp, sp^2))."""
    return log(sp) - log(sq) + (square(sq) + square(mq - mp)) / (2.0 * square(sp)) - 0.5


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": elu,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "none": lambda t: t,
}


# -- optimisation --------------------------------------------------------------


class Adam:
    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = 100.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state(self, state: dict) -> None:
        self.t = state["t"]
        self.m = [m.copy() for m in state["m"]]
        self.v = [v.copy() for v in state["v"]]


def directional_check(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    rng: np.random.Generator,
    eps: float = 1e-5,
    mask: np.ndarray | None = None,
) -> tuple[float, float]:
    """Compare the analytic directional derivative of ``loss_fn`` with a
    five-point central finite difference along a direction in ``param``.

    The direction mixes the analytic gradient with a random unit vector so
    the derivative is well away from zero; ``mask`` restricts it to a slice
    (e.g. one ensemble member). ``loss_fn`` must be deterministic.
    Returns ``(analytic, numeric)``.
    """
    param.grad = None
    loss = loss_fn()
    loss.backward()
    grad = np.zeros_like(param.data) if param.grad is None else param.grad.copy()
    param.grad = None
    m = np.ones(param.data.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    r = rng.standard_normal(param.data.shape) * m
    d = r / max(np.linalg.norm(r), 1e-300)
    gm = grad * m
    gn = np.linalg.norm(gm)
    if gn > 0:
        mixed = d + gm / gn
        # the two unit vectors can cancel (always a coin flip for a scalar)
        d = mixed / np.linalg.norm(mixed) if np.linalg.norm(mixed) > 1e-3 else gm / gn
    analytic = float(np.vdot(grad, d))
    base = param.data.copy()

    def at(k: float) -> float:
        param.data = (base + k * eps * d).astype(base.dtype)
        return float(loss_fn().data)

    with no_grad():
        f1, fm1, f2, fm2 = at(1), at(-1), at(2), at(-2)
    param.data = base
    return analytic, (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * eps)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
