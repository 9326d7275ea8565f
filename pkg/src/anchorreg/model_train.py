"""Two-stream classifier and the training loop for the four regularization modes.

Modes:

``ce``
    plain cross-entropy.
``cr``
    cross-entropy plus ``lambda2 * MSE(F, A[y])`` against the raw anchors.
``proto``
    cross-entropy plus ``proto_lambda * MSE(F, P[y])`` against banked
    batch-mean prototypes.
``sar``
    cross-entropy plus ``lambda2 * MSE(F, A_hat[y])`` on the main stream,
    then a separate auxiliary update of the embedding head and the shared
    classifier, then the gated EMA of the semantic anchors.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .anchors import AnchorSet
from .datagen import LongTailDataset
from .errors import DimensionError, NonFiniteLossError
from .grad_core import OptimizerState, Tensor, add, backward, mse, poly_lr, scale, sgd_update, softmax_ce, zero_grad
from .nn import Linear, MLP, snapshot
from .proto_baseline import PrototypeState, bank_update, compute_prototypes, intra_p2p_loss
from .sar_reg import (
    EmbeddingHead,
    SarConfig,
    SemanticAnchorState,
    anchor_confidences,
    aux_ce_loss,
    compute_reweights,
    ema_update,
    embed_anchors,
    p2a_loss,
)

__all__ = ["MODES", "ClassifierModel", "TrainConfig", "TrainLog", "init_model", "train", "evaluate", "step_loss"]

MODES = ("ce", "cr", "sar", "proto")


class ClassifierModel:
    """Feature extractor ``f_phi`` and shared linear classifier ``g_theta``.

    ``head`` is the anchor embedding head, present only for SAR runs.
    """

    def __init__(self, f_phi: MLP, g_theta: Linear, head: EmbeddingHead | None = None):
        self.f_phi = f_phi
        self.g_theta = g_theta
        self.head = head

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        feats = self.f_phi(x)
        return feats, self.g_theta(feats)

    def main_parameters(self) -> list[Tensor]:
        return self.f_phi.parameters() + self.g_theta.parameters()

    def aux_parameters(self) -> list[Tensor]:
        if self.head is None:
            return []
        return self.head.parameters() + self.g_theta.parameters()

    def parameters(self) -> list[Tensor]:
        head = self.head.parameters() if self.head is not None else []
        return self.main_parameters() + head

    @property
    def feature_dim(self) -> int:
        return self.f_phi.out_dim

    @property
    def num_classes(self) -> int:
        return self.g_theta.out_dim


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for model init, head init and batch order."""
    model_ss, head_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(model_ss), np.random.default_rng(head_ss), np.random.default_rng(shuffle_ss)


def init_model(
    input_dim: int,
    hidden: Sequence[int],
    D: int,
    C: int,
    seed: int,
    with_head: bool = False,
    head_hidden: int | None = None,
) -> ClassifierModel:
    model_rng, head_rng, _ = _streams(seed)
    f_phi = MLP(input_dim, list(hidden), D, model_rng, "f_phi")
    g_theta = Linear(D, C, model_rng, "g_theta")
    head = EmbeddingHead(D, head_rng, hidden=head_hidden) if with_head else None
    return ClassifierModel(f_phi, g_theta, head)


@dataclass
class TrainConfig:
    mode: str = "ce"
    sar: SarConfig = field(default_factory=SarConfig)
    proto_lambda: float = 0.1
    proto_bank_momentum: float = 0.9
    anchors: AnchorSet | None = None
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    eval_every: int = 0
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 16
    head_hidden: int | None = None
    log_anchors: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("sar", "cr"):
            if self.anchors is None:
                raise ValueError(f"mode={self.mode} requires anchors")
            if self.anchors.dim != self.feature_dim:
                raise DimensionError(
                    f"anchor dim {self.anchors.dim} must equal feature width {self.feature_dim}"
                )
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    model_snapshot: dict[str, np.ndarray] = field(default_factory=dict)
    features_test: np.ndarray | None = None
    preds_test: np.ndarray | None = None
    semantic_anchors: SemanticAnchorState | None = None
    prototypes: PrototypeState | None = None
    total_steps: int = 0


def step_loss(
    model: ClassifierModel,
    cfg: TrainConfig,
    X: np.ndarray,
    y: np.ndarray,
    sar_state: SemanticAnchorState | None = None,
    bank: PrototypeState | None = None,
) -> tuple[Tensor, dict, PrototypeState | None]:
    """Main-stream loss for one batch.

    Returns the loss tensor, a float breakdown and (proto mode) the bank
    after blending in this batch's prototypes.
    """
    feats, logits = model(Tensor(X))
    ce, _ = softmax_ce(logits, y)
    parts = {"ce": ce.item()}
    loss = ce
    if cfg.mode == "cr":
        reg = mse(feats, Tensor(cfg.anchors.A[y]))
        parts["reg"] = reg.item()
        if cfg.sar.lambda2:
            loss = add(ce, scale(reg, cfg.sar.lambda2))
    elif cfg.mode == "proto":
        batch = compute_prototypes(feats, y, model.num_classes)
        bank = bank_update(bank, batch)
        reg = intra_p2p_loss(feats, y, bank)
        parts["reg"] = reg.item()
        if cfg.proto_lambda:
            loss = add(ce, scale(reg, cfg.proto_lambda))
    elif cfg.mode == "sar":
        reg = p2a_loss(feats, y, sar_state)
        parts["reg"] = reg.item()
        if cfg.sar.lambda2:
            loss = add(ce, scale(reg, cfg.sar.lambda2))
    parts["total"] = loss.item()
    return loss, parts, bank


def _aux_step(model: ClassifierModel, cfg: TrainConfig, opt: OptimizerState, lr: float) -> dict:
    """Reweighted anchor classification update of the head and shared classifier.

    The step is skipped outright (no momentum drift, no weight decay) when
    lambda1 is 0 or every anchor is already classified above tau.
    """
    embedded = embed_anchors(model.head, cfg.anchors)
    anchor_logits = model.g_theta(embedded)
    conf = anchor_confidences(model.g_theta, embedded)
    w = compute_reweights(conf, cfg.sar.tau)
    frozen = not np.any(w > 0)
    if cfg.sar.lambda1 and not frozen:
        aux = aux_ce_loss(anchor_logits, w)
        aux_value = aux.item()
        params = model.aux_parameters()
        zero_grad(params)
        backward(scale(aux, cfg.sar.lambda1))
        sgd_update(params, opt, lr)
    else:
        aux_value = float(-np.dot(w, np.log(np.clip(conf, 1e-12, 1.0))))
    return {"conf": conf, "w": w, "aux": aux_value, "frozen": frozen}


def param_digest(params: Sequence[Tensor]) -> str:
    """SHA-256 over the raw bytes of the parameter values."""
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def _finite(parts: dict) -> bool:
    return all(math.isfinite(v) for v in parts.values())


def train(cfg: TrainConfig, train_ds: LongTailDataset, test_ds: LongTailDataset | None = None):
    """Run ``epochs * ceil(N / batch_size)`` SGD steps and return (model, log)."""
    C = train_ds.spec.C
    D = cfg.feature_dim
    if train_ds.X.shape[1] != train_ds.spec.input_dim:
        raise DimensionError("dataset feature width disagrees with its spec")
    model = init_model(
        train_ds.spec.input_dim, cfg.hidden, D, C, cfg.seed, with_head=cfg.mode == "sar", head_hidden=cfg.head_hidden
    )
    _, _, shuffle_rng = _streams(cfg.seed)
    opt = OptimizerState(base_lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sar_state = SemanticAnchorState.empty(C, D, cfg.sar.alpha) if cfg.mode == "sar" else None
    bank = PrototypeState.empty(C, D, cfg.proto_bank_momentum) if cfg.mode == "proto" else None

    N = len(train_ds)
    per_epoch = math.ceil(N / cfg.batch_size)
    total = cfg.epochs * per_epoch
    log = TrainLog(total_steps=total)
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X, y = train_ds.X[idx], train_ds.y[idx]
            lr = poly_lr(step, total, cfg.lr, cfg.poly_power)
            params = model.main_parameters()
            zero_grad(params)
            loss, parts, bank = step_loss(model, cfg, X, y, sar_state, bank)
            if not _finite(parts):
                raise NonFiniteLossError(step, parts, log.records)
            backward(loss)
            sgd_update(params, opt, lr)
            rec = {"step": step, "epoch": epoch, "lr": lr, **parts}

            if cfg.mode == "sar":
                aux = _aux_step(model, cfg, opt, lr)
                if not math.isfinite(aux["aux"]):
                    raise NonFiniteLossError(step, {**parts, "aux": aux["aux"]}, log.records)
                embedded = embed_anchors(model.head, cfg.anchors).value
                gate_conf = anchor_confidences(model.g_theta, Tensor(embedded))
                sar_state = ema_update(sar_state, embedded, gate_conf, cfg.sar.delta)
                rec.update(
                    conf=aux["conf"].tolist(),
                    w=aux["w"].tolist(),
                    aux=aux["aux"],
                    frozen=aux["frozen"],
                    gate_conf=gate_conf.tolist(),
                    active=sar_state.active.tolist(),
                    head_digest=param_digest(model.head.parameters()),
                )
                if cfg.log_anchors:
                    rec["embedded"] = embedded.tolist()
                    rec["A_hat"] = sar_state.A_hat.tolist()

            if cfg.eval_every and test_ds is not None and (step + 1) % cfg.eval_every == 0:
                preds, _ = evaluate(model, test_ds)
                rec["test_acc"] = float(np.mean(preds == test_ds.y))
            log.records.append(rec)
            step += 1

    log.model_snapshot = snapshot(model.parameters())
    log.semantic_anchors = sar_state
    log.prototypes = bank
    if test_ds is not None:
        log.preds_test, log.features_test = evaluate(model, test_ds)
    return model, log


def evaluate(model: ClassifierModel, ds) -> tuple[np.ndarray, np.ndarray]:
    """Argmax predictions (ties go to the lowest class index) and features."""
    X = ds.X if hasattr(ds, "X") else np.asarray(ds)
    feats, logits = model(Tensor(X))
    return np.argmax(logits.value, axis=1), feats.value
