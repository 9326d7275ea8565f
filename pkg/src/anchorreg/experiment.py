"""Flat key=value experiment configs and the run/compare drivers behind the CLI.

Every output directory gets a ``config.txt`` echo of the fully resolved
config, so result files are self-describing. Nothing time-dependent is
written, which keeps repeated invocations byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anchors import AnchorSet, generate_anchors, pairwise_cosine
from .datagen import GmmSpec, LongTailDataset, load_csv, sample_gmm, save_csv, split
from .errors import NonFiniteLossError, ParseError
from .metrics import build_report, class_centroids, cross_seed_consistency, dependency_matrix
from .model_train import MODES, TrainConfig, train
from .sar_reg import SarConfig

COMPARISON_HEADER = ["mode", "seed", "overall", "head", "body", "tail", "compactness", "separability"]
METRIC_KEYS = COMPARISON_HEADER[2:]


class ConfigError(ParseError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str | None = None
    # data
    num_classes: int = 10
    input_dim: int = 16
    n_max: int = 500
    beta: float = 100.0
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    data_seed: int = 0
    test_per_class: int = 50
    data_dir: str = ""
    # model / optimization
    mode: str = "sar"
    seed: int = 0
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    poly_power: float = 0.9
    eval_every: int = 0
    hidden: tuple = (64, 64)
    feature_dim: int = 16
    head_hidden: int = 0
    # anchor regularization
    lambda1: float = 1.0
    lambda2: float = 0.1
    tau: float = 0.9
    delta: float = 0.8
    alpha: float = 0.999
    anchor_source: str = "ND"
    anchor_seed: int = 0
    # prototype baseline; a negative value means "same as lambda2"
    proto_lambda: float = -1.0
    proto_bank_momentum: float = 0.9
    # experiment control
    seeds: tuple = (0, 1, 2, 3, 4)
    modes: tuple = ("ce", "sar")
    consistency: bool = True
    workers: int = 1
    log_anchors: bool = False

    @property
    def resolved_proto_lambda(self) -> float:
        return self.lambda2 if self.proto_lambda < 0 else self.proto_lambda

    def gmm_spec(self) -> GmmSpec:
        return GmmSpec(
            C=self.num_classes,
            input_dim=self.input_dim,
            N_max=self.n_max,
            beta=self.beta,
            class_separation=self.class_separation,
            noise_sigma=self.noise_sigma,
            seed=self.data_seed,
        )

    def anchor_set(self) -> AnchorSet:
        return generate_anchors(self.anchor_source, self.num_classes, self.feature_dim, self.anchor_seed)

    def train_config(self, mode: str, seed: int) -> TrainConfig:
        return TrainConfig(
            mode=mode,
            sar=SarConfig(self.lambda1, self.lambda2, self.tau, self.delta, self.alpha),
            proto_lambda=self.resolved_proto_lambda,
            proto_bank_momentum=self.proto_bank_momentum,
            anchors=self.anchor_set() if mode in ("sar", "cr") else None,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            poly_power=self.poly_power,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
            eval_every=self.eval_every,
            hidden=tuple(self.hidden),
            feature_dim=self.feature_dim,
            head_hidden=self.head_hidden or None,
            log_anchors=self.log_anchors,
        )

    def echo(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        lines.append(f"# resolved proto_lambda={self.resolved_proto_lambda!r}")
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
TUPLE_ITEM = {"hidden": int, "seeds": int, "modes": str}


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if key in TUPLE_ITEM:
            return tuple(TUPLE_ITEM[key](x.strip()) for x in raw.split(",") if x.strip())
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None, required=("output_dir",)) -> ExperimentConfig:
    values = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(path)))
    for key, raw in (overrides or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    for key in required:
        if values.get(key) in (None, ""):
            raise ConfigError(f"missing required key: {key}")
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    bad = [m for m in cfg.modes if m not in MODES]
    if bad or not cfg.modes:
        raise ConfigError(f"modes must be a non-empty subset of {MODES}, got {cfg.modes}")
    if not cfg.seeds:
        raise ConfigError("seeds must not be empty")
    if cfg.anchor_source not in ("ND", "OM", "MES"):
        raise ConfigError(f"anchor_source must be ND, OM or MES, got {cfg.anchor_source!r}")
    try:
        cfg.gmm_spec()
        SarConfig(cfg.lambda1, cfg.lambda2, cfg.tau, cfg.delta, cfg.alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- file writers ---------------------------------------------------------


def write_matrix_csv(path: Path, M: np.ndarray, row_label: str, col_prefix: str) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([row_label, *[f"{col_prefix}{k}" for k in range(M.shape[1])]])
        for i, row in enumerate(M):
            w.writerow([i, *[_csv_float(v) for v in row]])


def write_anchor_csv(path: Path, A: np.ndarray) -> None:
    write_matrix_csv(path, A, "class_id", "dim_")


def read_anchor_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "class_id":
        raise ParseError(f"{path}: expected header class_id,dim_0..")
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def _csv_float(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default, allow_nan=False) + "\n")


def write_jsonl(path: Path, records) -> None:
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, default=_json_default, allow_nan=True) + "\n")


# -- data ------------------------------------------------------------------


def build_datasets(cfg: ExperimentConfig) -> tuple[LongTailDataset, LongTailDataset]:
    """Training set with the exact long-tailed profile plus a balanced test set."""
    if cfg.data_dir:
        d = Path(cfg.data_dir)
        return load_csv(d / "train.csv"), load_csv(d / "test.csv")
    full = sample_gmm(cfg.gmm_spec(), extra_per_class=cfg.test_per_class)
    return split(full, cfg.test_per_class, seed=cfg.data_seed)


def write_datasets(cfg: ExperimentConfig, out: Path) -> tuple[LongTailDataset, LongTailDataset]:
    train_ds, test_ds = build_datasets(cfg)
    save_csv(train_ds, out / "train.csv")
    save_csv(test_ds, out / "test.csv")
    return train_ds, test_ds


# -- single run ------------------------------------------------------------


def representation_matrix(mode: str, log, cfg: ExperimentConfig, test_ds) -> tuple[str, np.ndarray]:
    """The class representation each mode regularizes toward."""
    if mode == "sar":
        return "semantic_anchors", log.semantic_anchors.A_hat
    if mode == "proto":
        return "prototypes", log.prototypes.P
    if mode == "cr":
        return "anchors", cfg.anchor_set().A
    cent, present = class_centroids(log.features_test, test_ds.y, cfg.num_classes)
    return "test_centroids", np.where(present[:, None], cent, 0.0)


def run_single(cfg: ExperimentConfig, mode: str, seed: int, out: Path, datasets=None) -> dict:
    """Train one (mode, seed) pair and write its artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo() + f"# run mode={mode} seed={seed}\n")
    train_ds, test_ds = datasets if datasets is not None else build_datasets(cfg)
    tcfg = cfg.train_config(mode, seed)
    try:
        _, log = train(tcfg, train_ds, test_ds)
    except NonFiniteLossError as exc:
        write_jsonl(out / "train_log.jsonl", exc.records)
        raise
    write_jsonl(out / "train_log.jsonl", log.records)
    report = build_report(log.preds_test, test_ds.y, log.features_test, train_ds.class_counts, cfg.num_classes)
    rep_source, rep = representation_matrix(mode, log, cfg, test_ds)
    rep_dep = dependency_matrix(rep)
    metrics = {
        "mode": mode,
        "seed": seed,
        "steps": log.total_steps,
        "train_class_counts": train_ds.class_counts.tolist(),
        **report.to_dict(),
        "dependency_source": "test_centroids",
        "representation_source": rep_source,
        "representation_dependency": [[None if math.isnan(v) else float(v) for v in row] for row in rep_dep],
    }
    write_json(out / "metrics.json", metrics)
    write_matrix_csv(out / "dependency.csv", report.dependency, "class_id", "class_")
    write_json(out / "model.json", {k: v for k, v in log.model_snapshot.items()})
    if mode in ("sar", "cr"):
        write_anchor_csv(out / "anchors.csv", tcfg.anchors.A)
    if mode == "sar":
        write_anchor_csv(out / "semantic_anchors.csv", log.semantic_anchors.A_hat)
    if mode == "proto":
        write_anchor_csv(out / "prototypes.csv", log.prototypes.P)
    return {
        "mode": mode,
        "seed": seed,
        "overall": report.overall_acc,
        "head": report.head_acc,
        "body": report.body_acc,
        "tail": report.tail_acc,
        "compactness": report.compactness,
        "separability": report.separability,
        "dependency": report.dependency,
        "representation_dependency": rep_dep,
        "representation_source": rep_source,
    }


def _run_job(args):
    cfg, mode, seed, out = args
    return run_single(cfg, mode, seed, Path(out))


# -- comparison --------------------------------------------------------------


def _mean_sd(values) -> tuple[float, float]:
    arr = np.array([v for v in values if not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def compare(cfg: ExperimentConfig) -> dict:
    """Train every (mode, seed) pair and write the comparison tables."""
    if cfg.consistency and len(cfg.seeds) < 2:
        raise ConfigError("cross-seed consistency needs at least 2 seeds (set consistency=false to skip)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    jobs = [
        (cfg, mode, seed, str(out / "runs" / mode / f"run{k:02d}_seed{seed}"))
        for mode in cfg.modes
        for k, seed in enumerate(cfg.seeds)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        datasets = build_datasets(cfg)
        results = [run_single(c, m, s, Path(o), datasets) for c, m, s, o in jobs]

    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for r in results:
            w.writerow([r["mode"], r["seed"], *[_csv_float(r[k]) for k in METRIC_KEYS]])

    by_mode = {m: [r for r in results if r["mode"] == m] for m in cfg.modes}
    consistency = {}
    if cfg.consistency:
        for m, rs in by_mode.items():
            entry = {}
            for kind, key in (("representation", "representation_dependency"), ("centroid", "dependency")):
                score = cross_seed_consistency([r[key] for r in rs])
                entry[kind] = {
                    "mean": None if math.isnan(score.mean) else score.mean,
                    "pairs": [
                        {"run_a": i, "run_b": j, "seed_a": rs[i]["seed"], "seed_b": rs[j]["seed"],
                         "pearson": None if math.isnan(v) else v}
                        for (i, j), v in score.pairs.items()
                    ],
                }
            entry["representation"]["source"] = rs[0]["representation_source"]
            consistency[m] = entry
        write_json(out / "consistency.json", consistency)

    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["mode", "runs"]
        for k in METRIC_KEYS:
            header += [f"{k}_mean", f"{k}_sd"]
        header += ["consistency_representation", "consistency_centroid"]
        w.writerow(header)
        for m, rs in by_mode.items():
            row = [m, len(rs)]
            for k in METRIC_KEYS:
                mean, sd = _mean_sd([r[k] for r in rs])
                row += [_csv_float(mean), _csv_float(sd)]
            c = consistency.get(m, {})
            for kind in ("representation", "centroid"):
                v = c.get(kind, {}).get("mean")
                row.append("nan" if v is None else _csv_float(v))
            w.writerow(row)

    deltas = []
    if "sar" in by_mode and "ce" in by_mode:
        with (out / "deltas.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", *[f"{k}_delta" for k in METRIC_KEYS]])
            for a, b in zip(by_mode["sar"], by_mode["ce"]):
                d = {k: a[k] - b[k] for k in METRIC_KEYS}
                deltas.append({"seed": a["seed"], **d})
                w.writerow([a["seed"], *[_csv_float(d[k]) for k in METRIC_KEYS]])
    return {"results": results, "consistency": consistency, "deltas": deltas}


def anchors_report(cfg: ExperimentConfig, out: Path) -> dict:
    anchors = cfg.anchor_set()
    cos = pairwise_cosine(anchors)
    off = cos[~np.eye(cos.shape[0], dtype=bool)]
    summary = {
        "source": anchors.source.value,
        "num_classes": anchors.num_classes,
        "dim": anchors.dim,
        "seed": anchors.seed,
        "offdiag_cosine_min": float(off.min()),
        "offdiag_cosine_max": float(off.max()),
        "offdiag_cosine_mean": float(off.mean()),
        "offdiag_cosine_max_abs": float(np.abs(off).max()),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    write_anchor_csv(out / "anchors.csv", anchors.A)
    write_matrix_csv(out / "cosine.csv", cos, "class_id", "class_")
    write_json(out / "summary.json", summary)
    return summary
