"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only the primitives the scoring model needs are provided. Every op builds a
node holding its parents and a closure mapping the output gradient to the
parent gradients; :meth:`Tensor.backward` replays those closures in reverse
topological order.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "GradientError",
    "ShapeError",
    "tensor",
    "zeros",
    "ones",
    "matmul",
    "stack",
    "softmax",
    "layer_norm",
    "relu",
    "tanh",
    "softplus",
    "dropout",
    "backward",
    "trace_activations",
    "check_gradients",
    "GradCheckResult",
    "adam_step",
    "Adam",
    "AdamHyper",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Misuse of the gradient machinery (non-scalar root, stale graph)."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Run ops inside without recording the graph."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    """An immutable float64 array with an optional gradient.

    Tensors created by user code are leaves; tensors produced by ops keep a
    reference to their parents until :meth:`backward` consumes the graph.
    """

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, *, _check: bool = True):
        # op outputs are fresh arrays and are adopted without a copy
        arr = np.array(data, dtype=np.float64) if _check else np.asarray(data, dtype=np.float64)
        if _check and not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (NaN/Inf rejected)")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

    # construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], fn) -> "Tensor":
        needs = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
        out = cls(data, requires_grad=needs, _check=False)
        if needs:
            out._parents = tuple(parents)
            out._backward = fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, _check=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self, other

        def fn(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._from_op(a.data + b.data, (a, b), fn)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-_lift(other))

    def __rsub__(self, other) -> "Tensor":
        return _lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            c = float(other)
            return Tensor._from_op(self.data * c, (self,), lambda g: (g * c,))
        other = _lift(other)
        a, b = self, other

        def fn(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._from_op(a.data * b.data, (a, b), fn)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self, other
        out = a.data / b.data

        def fn(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape),
            )

        return Tensor._from_op(out, (a, b), fn)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # shape manipulation -----------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),)
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._from_op(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        src_shape = self.shape

        def fn(g):
            full = np.zeros(src_shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(self.data[index], (self,), fn)

    # reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        src_shape = self.shape

        def fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src_shape),)

        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), fn)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # autodiff -----------------------------------------------------------------

    def backward(self) -> None:
        backward(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(out, (a, b), fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor._from_op(out, ts, fn)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax.

    ``mask`` (broadcastable boolean, True = keep) removes entries from the
    normalisation; a slice with no kept entry yields zeros.
    """
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"softmax axis {axis} out of range for {x.ndim}-d tensor")
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    denom = e.sum(axis=axis, keepdims=True)
    out = e / np.where(denom > 0, denom, 1.0)

    def fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain * xhat + bias``."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must match width {width}"
        )
    # sum / width is what ndarray.mean computes, without its Python wrapper
    mu = np.add.reduce(x.data, axis=-1, keepdims=True) / width
    xc = x.data - mu
    var = np.add.reduce(xc * xc, axis=-1, keepdims=True) / width
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def fn(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).reshape(-1, width).sum(axis=0)
        gbias = g.reshape(-1, width).sum(axis=0)
        return gx, ggain, gbias

    return Tensor._from_op(out, (x, gain, bias), fn)


_ACTIVATION_TRACE: list[list[np.ndarray]] = []


@contextmanager
def trace_activations():
    """Collect the ReLU on/off pattern of every forward pass run inside."""
    record: list[np.ndarray] = []
    _ACTIVATION_TRACE.append(record)
    try:
        yield record
    finally:
        _ACTIVATION_TRACE.remove(record)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    for record in _ACTIVATION_TRACE:
        record.append(keep)
    return Tensor._from_op(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def softplus(x: Tensor) -> Tensor:
    """``log(1 + exp(x))`` without overflow."""
    out = np.logaddexp(0.0, x.data)
    sig = np.exp(x.data - out)
    return Tensor._from_op(out, (x,), lambda g: (g * sig,))


def dropout(x: Tensor, keep_mask: np.ndarray | None, p: float) -> Tensor:
    """Inverted dropout with a caller-supplied boolean keep mask.

    ``keep_mask=None`` (eval mode) returns ``x`` unchanged.
    """
    if keep_mask is None or p == 0.0:
        return x
    scale = keep_mask * (1.0 / (1.0 - p))
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,))


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    todo: list[tuple[Tensor, bool]] = [(root, False)]
    while todo:
        node, expanded = todo.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        todo.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                todo.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    The graph is released afterwards; calling again on the same loss raises.
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GradientError("graph already consumed by a previous backward(); run a new forward")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor with requires_grad")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    moments: tuple[Sequence[np.ndarray], Sequence[np.ndarray]],
    hyper: AdamHyper,
    t: int,
) -> tuple[list[np.ndarray], tuple[list[np.ndarray], list[np.ndarray]]]:
    """One bias-corrected Adam update; pure, returns new params and moments."""
    if t < 1:
        raise ValueError("adam step counter t must be >= 1")
    m_prev, v_prev = moments
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for p, g, m, v in zip(params, grads, m_prev, v_prev, strict=True):
        if p.shape != g.shape:
            raise ShapeError(f"adam: param {p.shape} vs grad {g.shape}")
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        step = hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_p, (new_m, new_v)


@dataclass
class Adam:
    """Stateful wrapper around :func:`adam_step` for a list of leaf tensors."""

    params: list[Tensor]
    hyper: AdamHyper = field(default_factory=AdamHyper)
    t: int = 0

    def __post_init__(self):
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        new_p, (self.m, self.v) = adam_step(
            [p.data for p in self.params], grads, (self.m, self.v), self.hyper, self.t
        )
        for p, arr in zip(self.params, new_p):
            arr.flags.writeable = False
            p.data = arr

    def state_arrays(self) -> Iterable[np.ndarray]:
        yield from self.m
        yield from self.v


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_kink_skipped: int
    worst: tuple[str, tuple[int, ...]] | None = None


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    *,
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> GradCheckResult:
    """Compare backprop gradients of scalar ``fn()`` with central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. A coordinate whose
    +h and -h evaluations switch some ReLU is skipped: the finite difference
    straddles a kink there and is not a valid oracle.
    """
    for p in params.values():
        p.grad = None
    backward(fn())
    analytic = {k: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    worst, worst_at, checked, skipped = 0.0, None, 0, 0
    for name, p in params.items():
        coords = list(np.ndindex(p.shape))
        if max_per_tensor is not None and len(coords) > max_per_tensor:
            pick = rng.choice(len(coords), size=max_per_tensor, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        base = p.data
        for idx in coords:
            vals, patterns = [], []
            for sign in (1.0, -1.0):
                pert = base.copy()
                pert[idx] += sign * h
                p.data = pert
                with no_grad(), trace_activations() as rec:
                    vals.append(fn().item())
                patterns.append(rec)
            p.data = base
            if not _same_pattern(*patterns):
                skipped += 1
                continue
            num = (vals[0] - vals[1]) / (2.0 * h)
            a = analytic[name][idx]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, (name, idx)
    for p in params.values():
        p.grad = None
    return GradCheckResult(worst, checked, skipped, worst_at)
