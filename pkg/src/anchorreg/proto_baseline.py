"""Feature-derived class prototypes: the batch-mean / memory-bank baseline."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grad_core import Tensor, mse

__all__ = ["PrototypeState", "compute_prototypes", "intra_p2p_loss", "bank_update"]


@dataclass
class PrototypeState:
    P: np.ndarray
    counts: np.ndarray
    present: np.ndarray
    bank_momentum: float = 0.0

    @classmethod
    def empty(cls, C: int, D: int, bank_momentum: float = 0.0) -> PrototypeState:
        return cls(
            P=np.zeros((C, D)),
            counts=np.zeros(C, dtype=np.int64),
            present=np.zeros(C, dtype=bool),
            bank_momentum=float(bank_momentum),
        )


def compute_prototypes(features, labels, C: int, bank_momentum: float = 0.0) -> PrototypeState:
    """Per-class mean of the feature rows; absent classes keep a zero row."""
    F = features.value if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    sums = np.zeros((C, F.shape[1]))
    # np.add.at accumulates row by row in sample order, like a plain loop
    np.add.at(sums, labels, F)
    counts = np.bincount(labels, minlength=C).astype(np.int64)
    present = counts > 0
    P = np.zeros_like(sums)
    P[present] = sums[present] / counts[present][:, None]
    return PrototypeState(P=P, counts=counts, present=present, bank_momentum=float(bank_momentum))


def intra_p2p_loss(features: Tensor, labels, state: PrototypeState) -> Tensor:
    """MSE between each feature row and its (constant) class prototype."""
    labels = np.asarray(labels, dtype=np.intp)
    return mse(features, Tensor(state.P[labels]), mask=state.present[labels])


def bank_update(state: PrototypeState, batch_state: PrototypeState) -> PrototypeState:
    """Blend batch prototypes into the bank for every class seen in the batch."""
    if state.P.shape != batch_state.P.shape:
        raise ValueError(f"bank {state.P.shape} and batch {batch_state.P.shape} differ")
    m = state.bank_momentum
    P = state.P.copy()
    seen = batch_state.present
    old = seen & state.present
    new = seen & ~state.present
    P[old] = m * P[old] + (1.0 - m) * batch_state.P[old]
    P[new] = batch_state.P[new]
    return replace(
        state,
        P=P,
        counts=state.counts + batch_state.counts,
        present=state.present | seen,
    )
