"""The auxiliary anchor stream and its pull on the features.

Fixed anchors ``A`` are projected by a small trainable head ``h`` into the
feature space. The shared classifier scores the embedded anchors; a
confidence-reweighted cross-entropy keeps them separable, an EMA with a
confidence gate turns them into slowly moving semantic anchors, and a
squared-error pull drags each feature row toward the semantic anchor of
its class. The pull is one-way: neither the semantic anchors nor the head
receive gradient from it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .anchors import AnchorSet
from .errors import DimensionError
from .grad_core import Tensor, add, constant, mse, scale, weighted_nll
from .nn import MLP

log = logging.getLogger(__name__)

CONF_CLAMP = 1e-12

__all__ = [
    "SarConfig",
    "EmbeddingHead",
    "SemanticAnchorState",
    "embed_anchors",
    "anchor_confidences",
    "compute_reweights",
    "aux_ce_loss",
    "ema_update",
    "p2a_loss",
    "sar_total_loss",
]


@dataclass(frozen=True)
class SarConfig:
    lambda1: float = 1.0
    lambda2: float = 0.1
    tau: float = 0.9
    delta: float = 0.8
    alpha: float = 0.999

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(f"loss weights must be >= 0, got {self.lambda1}, {self.lambda2}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


class EmbeddingHead(MLP):
    """Two affine+ReLU layers and an affine output, R^D -> R^D."""

    def __init__(self, dim: int, rng: np.random.Generator, hidden: int | None = None, name: str = "head"):
        hidden = dim if hidden is None else hidden
        super().__init__(dim, [hidden, hidden], dim, rng, name)


@dataclass
class SemanticAnchorState:
    A_hat: np.ndarray
    alpha: float
    active: np.ndarray
    initialized: np.ndarray
    step: int = 0

    @classmethod
    def empty(cls, C: int, D: int, alpha: float) -> SemanticAnchorState:
        return cls(
            A_hat=np.zeros((C, D)),
            alpha=float(alpha),
            active=np.zeros(C, dtype=bool),
            initialized=np.zeros(C, dtype=bool),
        )

    def copy(self) -> SemanticAnchorState:
        return replace(
            self,
            A_hat=self.A_hat.copy(),
            active=self.active.copy(),
            initialized=self.initialized.copy(),
        )


def embed_anchors(head: EmbeddingHead, anchors: AnchorSet) -> Tensor:
    """h(A) on the tape; A itself is a constant."""
    A = anchors.A if isinstance(anchors, AnchorSet) else np.asarray(anchors)
    if A.shape[1] != head.in_dim:
        raise DimensionError(f"anchor dim {A.shape[1]} != head input dim {head.in_dim}")
    return head(Tensor(A))


def anchor_confidences(classifier, embedded: Tensor) -> np.ndarray:
    """Diagonal of softmax(g(h(A))): probability each anchor gets its own class."""
    logits = classifier(constant(embedded).detach())
    C = embedded.rows
    if logits.cols != C:
        raise DimensionError(f"classifier emits {logits.cols} classes, anchors cover {C}")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p[np.arange(C), np.arange(C)]


def compute_reweights(conf, tau: float) -> np.ndarray:
    """Zero out confident classes, log-renormalize the rest.

    ``w[c] = 0`` when ``conf[c] > tau``; otherwise
    ``w[c] = log(conf[c]) / sum(log(conf[i]) for unfiltered i)``.
    Every log is negative, so the kept weights are positive, sum to one
    and grow as confidence shrinks.
    """
    conf = np.asarray(conf, dtype=np.float64)
    clamped = np.clip(conf, CONF_CLAMP, 1.0 - CONF_CLAMP)
    if np.any(clamped != conf):
        log.debug("clamped anchor confidences to [%g, 1-%g]", CONF_CLAMP, CONF_CLAMP)
    keep = clamped <= tau
    w = np.zeros_like(clamped)
    if keep.any():
        logs = np.log(clamped[keep])
        w[keep] = logs / logs.sum()
    return w


def aux_ce_loss(anchor_logits: Tensor, w) -> Tensor:
    """``-sum_c w[c] * log softmax(anchor_logits)[c, c]`` with ``w`` constant."""
    C = anchor_logits.rows
    loss, _ = weighted_nll(anchor_logits, np.arange(C), w)
    return loss


def ema_update(state: SemanticAnchorState, embedded, conf, delta: float) -> SemanticAnchorState:
    """Return a new state with gated EMA applied to each class row.

    Classes whose confidence is strictly above ``delta`` move toward the
    embedded anchor (or adopt it on first activation) and become active;
    the rest stay put and are marked inactive.
    """
    emb = embedded.value if isinstance(embedded, Tensor) else np.asarray(embedded, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    if emb.shape != state.A_hat.shape or conf.shape[0] != emb.shape[0]:
        raise DimensionError(f"embedded {emb.shape} / conf {conf.shape} vs state {state.A_hat.shape}")
    new = state.copy()
    a = state.alpha
    for c in range(emb.shape[0]):
        if conf[c] > delta:
            if new.initialized[c]:
                new.A_hat[c] = a * new.A_hat[c] + (1.0 - a) * emb[c]
            else:
                new.A_hat[c] = emb[c]
                new.initialized[c] = True
            new.active[c] = True
        else:
            new.active[c] = False
    new.step += 1
    return new


def p2a_loss(features: Tensor, labels, state: SemanticAnchorState) -> Tensor:
    """Squared-error pull of features toward the semantic anchor of their class.

    Only rows whose class is currently active count; the anchors are
    constants here.
    """
    labels = np.asarray(labels, dtype=np.intp)
    target = state.A_hat[labels]
    return mse(features, Tensor(target), mask=state.active[labels])


def sar_total_loss(ce, aux, p2a, cfg: SarConfig) -> Tensor:
    """``ce + lambda1 * aux + lambda2 * p2a``."""
    return add(ce, scale(aux, cfg.lambda1), scale(p2a, cfg.lambda2))
