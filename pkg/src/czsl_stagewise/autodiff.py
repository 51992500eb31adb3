"""Dense float64 tensors with reverse-mode differentiation.

Only the primitives the model needs are provided. Every primitive records a
closure that maps the output adjoint to input adjoints; ``Tensor.backward``
replays those closures once each, newest first.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError, ParameterError

__all__ = [
    "Tensor", "DimensionError", "ParameterError", "EvaluationError",
    "tensor", "no_grad", "is_grad_enabled", "reverse_schedule",
    "matmul", "add", "sub", "mul", "scale", "neg", "sum", "mean",
    "reshape", "transpose", "getitem", "concat_last_axis", "stack_mean",
    "relu", "softmax", "layer_norm", "dropout", "l2_normalize",
    "cross_entropy_from_probs", "make_rng", "grad_check", "GradCheckReport",
]


_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_counter = itertools.count()


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad():
    """Run the block without recording operations."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """n-d array of float64 with an optional gradient slot.

    A tensor created by a primitive keeps references to its inputs and a
    backward closure while gradients are enabled; leaves accumulate ``grad``
    across backward calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward",
                 "_op", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._seq = next(_counter)
        self._consumed = False

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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self, grad=None) -> None:
        """Propagate adjoints from this tensor to every reachable leaf.

        The record is released afterwards; calling backward again on it
        raises instead of silently double-counting.
        """
        if self._consumed:
            raise RuntimeError("computation record already consumed by backward; re-run forward")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if grad is None:
            if self.size != 1:
                raise DimensionError(f"backward needs an explicit grad for shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise DimensionError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")

        schedule = reverse_schedule(self)
        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in schedule:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
        for node in schedule:
            if not node.is_leaf:
                node._backward = None
                node._parents = ()
                node._consumed = True
                node._op = node._op + ":released"


def reverse_schedule(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, newest first.

    Creation order is execution order, so sorting by creation counter gives a
    valid reverse topological order with each node listed once.
    """
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen[id(node)] = node
        stack.extend(node._parents)
    return sorted(seen.values(), key=lambda t: t._seq, reverse=True)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_counter)
    out._consumed = False
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} disagree") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                # shared right operand: fold all leading axes into one GEMM
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product (broadcasting); also used for learnable scalars."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- structure ------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Indexing, including integer-array gathers (repeated rows accumulate)."""
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(np.array(a.data[idx]), (a,), backward, "getitem")


def concat_last_axis(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_last_axis: no operands")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(f"concat_last_axis: leading axes {p.shape[:-1]} != {lead}")
    widths = [p.shape[-1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=-1), parts, backward, "concat")


def stack_mean(parts: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return scale(total, 1.0 / len(parts))


# -- nonlinearities ---------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _result(y, (a,), lambda g: (g * (y > 0),), "relu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, offset: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply optional gain and offset."""
    if eps <= 0:
        raise ParameterError("layer_norm: eps must be positive")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    y = xhat if gd is None else xhat * gd
    if offset is not None:
        y = y + offset.data
    parents = [x] + [p for p in (gain, offset) if p is not None]

    def backward(g):
        gx_hat = g if gd is None else g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0).reshape(gain.shape))
        if offset is not None:
            grads.append(g.reshape(-1, d).sum(axis=0).reshape(offset.shape))
        return tuple(grads)

    return _result(y, parents, backward, "layer_norm")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator used for dropout masks."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``p`` is zero."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _result(y, (x,), backward, "l2_normalize")


PROB_FLOOR = 1e-12


def cross_entropy_from_probs(probs: Tensor, labels) -> Tensor:
    """Mean of ``-log p[label]`` over rows, with probabilities floored at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"cross_entropy: probs {probs.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise DimensionError("cross_entropy: label out of range")
    rows = np.arange(labels.size)
    picked = probs.data[rows, labels]
    clipped = picked < PROB_FLOOR
    safe = np.maximum(picked, PROB_FLOOR)
    n = labels.size

    def backward(g):
        out = np.zeros_like(probs.data)
        out[rows, labels] = np.where(clipped, 0.0, -g / (n * safe))
        return (out,)

    return _result(np.asarray(-np.log(safe).mean()), (probs,), backward, "cross_entropy")


# -- gradient verification ------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    failures: list[tuple[str, tuple[int, ...], float, float, float]] = field(default_factory=list)
    per_leaf: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "ok" if self.passed else f"{len(self.failures)} failing coordinates"
        return f"max rel err {self.max_rel_error:.3e} over {self.n_checked} coords ({status})"


def grad_check(f: Callable[[], Tensor], leaves: Mapping[str, Tensor], step: float = 1e-5,
               tolerance: float = 1e-4, max_coords: int = 200, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic. Leaves with more than ``max_coords`` entries
    are checked on a random subsample. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if step <= 0:
        raise ParameterError("grad_check: step must be positive")
    for leaf in leaves.values():
        leaf.zero_grad()
    out = f()
    if out.size != 1:
        raise DimensionError("grad_check: f must return a scalar")
    out.backward()
    analytic = {name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).copy()
                for name, leaf in leaves.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, n_checked=0, tolerance=tolerance)
    with no_grad():
        for name, leaf in leaves.items():
            flat = leaf.data.reshape(-1)
            coords = np.arange(flat.size)
            if flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            worst = 0.0
            for c in coords:
                orig = flat[c]
                flat[c] = orig + step
                fp = f().item()
                flat[c] = orig - step
                fm = f().item()
                flat[c] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise EvaluationError(f"grad_check: non-finite f at {name}[{c}]")
                num = (fp - fm) / (2 * step)
                ana = analytic[name].reshape(-1)[c]
                rel = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, rel)
                if rel > tolerance:
                    idx = tuple(int(i) for i in np.unravel_index(c, leaf.shape))
                    report.failures.append((name, idx, float(ana), float(num), float(rel)))
            report.per_leaf[name] = worst
            report.max_rel_error = max(report.max_rel_error, worst)
            report.n_checked += len(coords)
    for leaf in leaves.values():
        leaf.zero_grad()
    return report
