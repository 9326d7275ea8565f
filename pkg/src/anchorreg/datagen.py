"""Synthetic long-tailed Gaussian-mixture datasets and their CSV format.

Class ``c`` of ``C`` receives ``round(N_max * beta ** (-c / (C - 1)))``
training samples, so class 0 is the head and class C-1 the rarest tail
class with roughly ``N_max / beta`` samples.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapabilityError, ParseError

__all__ = ["GmmSpec", "LongTailDataset", "class_counts", "sample_gmm", "split", "save_csv", "load_csv", "meta_path"]

MAX_MEAN_ATTEMPTS = 1000


@dataclass(frozen=True)
class GmmSpec:
    C: int = 10
    input_dim: int = 16
    N_max: int = 500
    beta: float = 100.0
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise ValueError(f"C must be >= 2, got {self.C}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.N_max < 1:
            raise ValueError(f"N_max must be >= 1, got {self.N_max}")
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.class_separation < 0 or self.noise_sigma < 0:
            raise ValueError("class_separation and noise_sigma must be >= 0")


@dataclass
class LongTailDataset:
    X: np.ndarray
    y: np.ndarray
    class_counts: np.ndarray
    spec: GmmSpec

    def __len__(self):
        return self.y.shape[0]

    @property
    def num_classes(self) -> int:
        return self.spec.C


def class_counts(C: int, N_max: int, beta: float) -> np.ndarray:
    if C < 2 or N_max < 1 or beta < 1:
        raise ValueError(f"need C >= 2, N_max >= 1, beta >= 1 (got {C}, {N_max}, {beta})")
    counts = [max(1, math.floor(N_max * beta ** (-c / (C - 1)) + 0.5)) for c in range(C)]
    return np.array(counts, dtype=np.int64)


def _class_means(spec: GmmSpec, rng: np.random.Generator) -> np.ndarray:
    unit = spec.noise_sigma if spec.noise_sigma > 0 else 1.0
    min_dist = spec.class_separation * spec.noise_sigma
    # typical pairwise distance of two draws is 1.5 * class_separation * unit
    spread = 1.5 * spec.class_separation * unit / math.sqrt(2 * spec.input_dim)
    means = []
    for c in range(spec.C):
        for _ in range(MAX_MEAN_ATTEMPTS):
            cand = rng.normal(0.0, spread, size=spec.input_dim)
            if all(np.linalg.norm(cand - m) >= min_dist for m in means):
                means.append(cand)
                break
        else:
            raise CapabilityError(
                f"could not place mean of class {c} at distance >= {min_dist:g} from the others "
                f"after {MAX_MEAN_ATTEMPTS} draws; increase input_dim or relax class_separation"
            )
    return np.array(means)


def sample_gmm(spec: GmmSpec, extra_per_class: int = 0) -> LongTailDataset:
    """Draw the long-tailed dataset described by ``spec``.

    ``extra_per_class`` adds that many samples to every class on top of
    the long-tailed profile, e.g. to carve a balanced test set with
    :func:`split` while the training part keeps the exact profile.
    """
    rng = np.random.default_rng(spec.seed)
    means = _class_means(spec, rng)
    counts = class_counts(spec.C, spec.N_max, spec.beta) + int(extra_per_class)
    y = np.repeat(np.arange(spec.C), counts)
    noise = rng.standard_normal((y.shape[0], spec.input_dim))
    X = means[y] + spec.noise_sigma * noise
    return LongTailDataset(X=X, y=y, class_counts=counts, spec=spec)


def _subset(ds: LongTailDataset, idx: np.ndarray) -> LongTailDataset:
    y = ds.y[idx]
    return LongTailDataset(
        X=ds.X[idx], y=y, class_counts=np.bincount(y, minlength=ds.spec.C).astype(np.int64), spec=ds.spec
    )


def split(ds: LongTailDataset, test_per_class: int, seed: int = 0) -> tuple[LongTailDataset, LongTailDataset]:
    """Hold out ``test_per_class`` random samples of every class."""
    if test_per_class < 0:
        raise ValueError("test_per_class must be >= 0")
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(ds.spec.C):
        members = np.flatnonzero(ds.y == c)
        if test_per_class and members.size <= test_per_class:
            raise ValueError(
                f"class {c} has {members.size} samples, needs more than {test_per_class} "
                "to keep a non-empty training part"
            )
        test_idx.append(rng.permutation(members)[:test_per_class])
    test_idx = np.sort(np.concatenate(test_idx)).astype(np.intp)
    train_mask = np.ones(len(ds), dtype=bool)
    train_mask[test_idx] = False
    return _subset(ds, np.flatnonzero(train_mask)), _subset(ds, test_idx)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def save_csv(ds: LongTailDataset, path) -> None:
    path = Path(path)
    K = ds.X.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *[f"f_{k}" for k in range(K)]])
        for label, row in zip(ds.y, ds.X):
            w.writerow([int(label), *[repr(float(v)) for v in row]])
    with meta_path(path).open("w") as fh:
        for f in dataclasses.fields(GmmSpec):
            fh.write(f"{f.name}={getattr(ds.spec, f.name)!r}\n")


def _load_meta(path: Path) -> GmmSpec:
    mpath = meta_path(path)
    if not mpath.exists():
        raise ParseError(f"missing metadata sidecar {mpath}")
    types = {f.name: f.type for f in dataclasses.fields(GmmSpec)}
    values = {}
    for lineno, line in enumerate(mpath.read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or key not in types:
            raise ParseError(f"{mpath}:{lineno}: unexpected metadata line {line!r}")
        try:
            values[key] = int(raw) if types[key] in (int, "int") else float(raw)
        except ValueError as exc:
            raise ParseError(f"{mpath}:{lineno}: bad value for {key}: {raw!r}") from exc
    missing = set(types) - set(values)
    if missing:
        raise ParseError(f"{mpath}: missing keys {sorted(missing)}")
    return GmmSpec(**values)


def load_csv(path) -> LongTailDataset:
    path = Path(path)
    spec = _load_meta(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    expected = ["label", *[f"f_{k}" for k in range(spec.input_dim)]]
    if rows[0] != expected:
        raise ParseError(f"{path}:1: header {rows[0][:4]}... does not match label,f_0..f_{spec.input_dim - 1}")
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(expected):
            raise ParseError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
        try:
            label = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if not 0 <= label < spec.C:
            raise ParseError(f"{path}:{lineno}: label {label} outside [0, {spec.C})")
        labels.append(label)
        feats.append(values)
    y = np.array(labels, dtype=np.int64)
    X = np.array(feats, dtype=np.float64).reshape(len(labels), spec.input_dim)
    return LongTailDataset(X=X, y=y, class_counts=np.bincount(y, minlength=spec.C).astype(np.int64), spec=spec)
