"""Fixed pre-defined class anchors.

Three generators are provided:

* ``ND``  -- i.i.d. standard normal entries.
* ``OM``  -- C mutually orthonormal rows in R^D.
* ``MES`` -- a simplex equiangular tight frame (unit rows, all pairwise
  cosines equal to -1/(C-1)) rotated into R^D.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CapabilityError, NumericError

__all__ = ["AnchorSource", "AnchorSet", "generate_anchors", "orthonormal_rows", "simplex_etf", "pairwise_cosine"]


class AnchorSource(str, Enum):
    ND = "ND"
    OM = "OM"
    MES = "MES"


@dataclass(frozen=True)
class AnchorSet:
    A: np.ndarray
    source: AnchorSource
    seed: int

    def __post_init__(self):
        self.A.setflags(write=False)

    @property
    def frozen(self) -> bool:
        return True

    @property
    def num_classes(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]


def orthonormal_rows(rows: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass."""
    q = np.array(rows, dtype=np.float64)
    for i in range(q.shape[0]):
        v = q[i]
        for _ in range(2):
            for j in range(i):
                v = v - np.dot(q[j], v) * q[j]
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise NumericError(f"row {i} is linearly dependent on earlier rows")
        q[i] = v / norm
    return q


def simplex_etf(C: int) -> np.ndarray:
    """sqrt(C/(C-1)) * (I - 11^T / C): C unit rows with cosine -1/(C-1)."""
    return np.sqrt(C / (C - 1)) * (np.eye(C) - np.full((C, C), 1.0 / C))


def generate_anchors(source, C: int, D: int, seed: int) -> AnchorSet:
    source = AnchorSource(source)
    if C < 2:
        raise ValueError(f"need at least 2 classes, got {C}")
    if D < 1:
        raise ValueError(f"anchor dimension must be positive, got {D}")
    if source is not AnchorSource.ND and D < C:
        raise CapabilityError(
            f"{source.value} anchors need dimension D >= number of classes C (got D={D}, C={C})"
        )
    rng = np.random.default_rng(seed)
    if source is AnchorSource.ND:
        A = rng.standard_normal((C, D))
    elif source is AnchorSource.OM:
        A = orthonormal_rows(rng.standard_normal((C, D)))
    else:
        # rotation rows are orthonormal, so M @ U keeps every inner product of M
        U = orthonormal_rows(rng.standard_normal((C, D)))
        A = simplex_etf(C) @ U
    return AnchorSet(A=A, source=source, seed=int(seed))


def pairwise_cosine(anchors) -> np.ndarray:
    """C x C cosine similarity of the anchor rows (or of any matrix)."""
    A = anchors.A if isinstance(anchors, AnchorSet) else np.asarray(anchors, dtype=np.float64)
    norms = np.linalg.norm(A, axis=1)
    for i, n in enumerate(norms):
        if n == 0.0:
            raise NumericError(f"row {i} has zero norm")
    unit = A / norms[:, None]
    cos = unit @ unit.T
    cos = 0.5 * (cos + cos.T)
    np.fill_diagonal(cos, 1.0)
    return cos
