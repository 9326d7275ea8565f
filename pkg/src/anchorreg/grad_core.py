"""Dense 2-D reverse-mode autodiff, SGD with momentum and a poly lr schedule.

Every value is a float64 matrix wrapped in :class:`Tensor`. Operations
record their inputs and a local backward rule on the result; calling
:func:`backward` on a 1x1 loss orders the recorded graph topologically
(the tape), walks it once in reverse and then releases it.

Example::

    x = Tensor([[1.0, 2.0]])
    W = Tensor(np.eye(2), requires_grad=True, name="W")
    b = Tensor([[0.0, 0.0]], requires_grad=True, name="b")
    loss = sum_all(affine(x, W, b))
    backward(loss)
    b.grad  # [[1., 1.]]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, StateError

__all__ = [
    "Tensor",
    "constant",
    "affine",
    "relu",
    "weighted_nll",
    "softmax_ce",
    "mse",
    "add",
    "scale",
    "sum_all",
    "backward",
    "zero_grad",
    "finite_diff_check",
    "OptimizerState",
    "sgd_step",
    "sgd_update",
    "poly_lr",
]


class Tensor:
    """A row-major real matrix with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def detach(self) -> Tensor:
        return Tensor(self.value.copy())

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Tensor:
    """Wrap a value (or pass a Tensor through) without tracking gradients."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(value: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.name = None
    out._consumed = False
    tracked = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(tracked)
    if tracked:
        out.grad = None
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out.grad = None
        out._parents = ()
        out._backward = None
    return out


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` with ``b`` broadcast over rows."""
    if x.cols != W.rows or b.shape != (1, W.cols):
        raise DimensionError(
            f"affine: x {x.shape}, W {W.shape}, b {b.shape} do not conform"
        )
    xv, Wv = x.value, W.value

    def rule(g):
        return (
            g @ Wv.T if x.requires_grad else None,
            xv.T @ g if W.requires_grad else None,
            g.sum(axis=0, keepdims=True) if b.requires_grad else None,
        )

    return _result(xv @ Wv + b.value, (x, W, b), rule)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0.0

    def rule(g):
        return (g * mask,)

    return _result(np.where(mask, x.value, 0.0), (x,), rule)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels, n: int, c: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c}): min {labels.min()}, max {labels.max()}")
    return labels.astype(np.intp)


def weighted_nll(logits: Tensor, labels, weights) -> tuple[Tensor, np.ndarray]:
    """``-sum_i weights[i] * log softmax(logits)[i, labels[i]]``.

    Returns the scalar loss and the row-wise softmax probabilities. The
    weights are constants; no gradient flows through them.
    """
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != n:
        raise DimensionError(f"expected {n} weights, got {weights.shape[0]}")
    logp = _log_softmax(logits.value)
    probs = np.exp(logp)
    rows = np.arange(n)
    loss = -float(np.dot(weights, logp[rows, labels]))

    def rule(g):
        onehot = np.zeros_like(probs)
        onehot[rows, labels] = 1.0
        return (g[0, 0] * weights[:, None] * (probs - onehot),)

    return _result(np.array([[loss]]), (logits,), rule), probs


def softmax_ce(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over rows, plus the class probabilities."""
    n = logits.rows
    if n < 1:
        raise ValueError("softmax_ce needs at least one row")
    return weighted_nll(logits, labels, np.full(n, 1.0 / n))


def mse(a: Tensor, b, mask=None) -> Tensor:
    """Mean squared difference over the unmasked rows and all columns.

    When the mask selects no row the result is a constant 0 that carries
    no graph, so nothing upstream receives a gradient.
    """
    b = constant(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    if mask is None:
        mask = np.ones(a.rows, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape[0] != a.rows:
            raise DimensionError(f"mse: mask length {mask.shape[0]} != rows {a.rows}")
    kept = int(mask.sum())
    if kept == 0:
        return Tensor([[0.0]])
    denom = kept * a.cols
    diff = (a.value - b.value) * mask[:, None]
    loss = float(np.sum(diff * diff)) / denom

    def rule(g):
        d = (2.0 * g[0, 0] / denom) * diff
        return (d if a.requires_grad else None, -d if b.requires_grad else None)

    return _result(np.array([[loss]]), (a, b), rule)


def add(*terms) -> Tensor:
    """Sum of equally shaped tensors (python floats are promoted)."""
    terms = [constant(t) for t in terms]
    shape = terms[0].shape
    for t in terms[1:]:
        if t.shape != shape:
            raise DimensionError(f"add: shapes {shape} and {t.shape} differ")
    total = terms[0].value.copy()
    for t in terms[1:]:
        total = total + t.value

    def rule(g):
        return tuple(g for _ in terms)

    return _result(total, terms, rule)


def scale(x, factor: float) -> Tensor:
    x = constant(x)
    factor = float(factor)

    def rule(g):
        return (g * factor,)

    return _result(x.value * factor, (x,), rule)


def sum_all(x: Tensor) -> Tensor:
    def rule(g):
        return (np.full(x.shape, g[0, 0]),)

    return _result(np.array([[x.value.sum()]]), (x,), rule)


def _topological(loss: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> int:
    """Populate ``.grad`` of every tracked tensor feeding ``loss``.

    Leaf gradients accumulate (call :func:`zero_grad` between steps).
    The graph is released afterwards; a second call on the same loss
    raises :class:`StateError`. Returns the number of nodes visited.
    """
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a 1x1 loss, got {loss.shape}")
    if loss._consumed:
        raise StateError("backward already ran on this loss; run a new forward pass")
    loss._consumed = True
    if not loss.requires_grad:
        return 0
    tape = _topological(loss)
    pending = {id(loss): np.ones((1, 1))}
    visited = 0
    for node in reversed(tape):
        g = pending.pop(id(node), None)
        visited += 1
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    for node in tape:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
    return visited


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Largest relative gap between taped and central-difference gradients.

    ``loss_fn`` must rebuild the graph on every call and be deterministic.
    """
    zero_grad(params)
    loss = loss_fn()
    if not math.isfinite(loss.item()):
        raise NumericError(f"loss is not finite: {loss.item()}")
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {p.name}[{k}]")
            numeric = (up - down) / (2.0 * eps)
            rel = abs(gflat[k] - numeric) / max(1e-12, abs(numeric))
            worst = max(worst, rel)
    return worst


@dataclass
class OptimizerState:
    """Per-parameter momentum buffers plus SGD hyperparameters."""

    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    step: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(param: Tensor, grad: np.ndarray, state: OptimizerState, lr: float) -> Tensor:
    """One momentum-SGD update of ``param`` in place.

    v <- momentum * v + (grad + wd * param);  param <- param - lr * v
    """
    key = param.name or str(id(param))
    if grad.shape != param.shape:
        raise DimensionError(f"grad {grad.shape} does not match parameter {key} {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter {key}")
    v = state.velocity.get(key)
    if v is None:
        v = np.zeros_like(param.value)
    v = state.momentum * v + (grad + state.weight_decay * param.value)
    state.velocity[key] = v
    param.value -= lr * v
    return param


def sgd_update(params: Sequence[Tensor], state: OptimizerState, lr: float) -> None:
    """Apply :func:`sgd_step` to every parameter, then count one update."""
    for p in params:
        sgd_step(p, p.grad, state, lr)
    state.step += 1


def poly_lr(step: int, total: int, base_lr: float, power: float = 0.9) -> float:
    """Polynomial annealing: ``base_lr * (1 - step/total) ** power``."""
    if total <= 0:
        raise ValueError(f"total steps must be positive, got {total}")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return base_lr * (1.0 - step / total) ** power
