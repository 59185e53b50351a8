"""Linear scorers, prior-shifted cross-entropy losses, and the SGD trainer.

All three losses are softmax cross-entropy evaluated at (optionally) shifted
logits; the shift is a constant built from a prior vector and contributes no
gradient. The trainer is plain mini-batch SGD with momentum, weight decay,
one warmup epoch and cosine annealing, and is bit-deterministic given its
config seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import GroupPrior, ValidationError


class DivergenceError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """SGD schedule: one warmup epoch, then cosine annealing to zero.

    The default learning rate is sized for the low-dimensional synthetic
    benchmarks, where the prior offsets only engage once logits reach the
    offset scale within the epoch budget. For ~1000-d unit-norm embedding
    exports use the much smaller embedding-scale rate (see
    ``pipeline.EMBEDDING_SCALE_RECIPE``).
    """

    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.3
    weight_decay: float = 5e-5
    momentum: float = 0.9
    warmup_lr: float = 0.015
    warmup_epochs: int = 1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        for name in ("learning_rate", "weight_decay", "momentum", "warmup_lr"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.warmup_epochs < 0:
            raise ValidationError("warmup_epochs must be >= 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index."""
        if epoch <= self.warmup_epochs:
            return self.warmup_lr
        t = epoch - 1
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * t / self.epochs))


@dataclass(frozen=True)
class LinearScorer:
    """Linear map from features to class or group logits."""

    weights: np.ndarray  # (C, d)
    bias: np.ndarray | None = None
    target_space: str = "class"
    normalize: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 2 or w.shape[0] < 2:
            raise ValidationError("weights must be (C>=2, d)")
        if not np.isfinite(w).all():
            raise ValidationError("weights contain non-finite entries")
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64)
            object.__setattr__(self, "bias", b)
            if b.shape != (w.shape[0],) or not np.isfinite(b).all():
                raise ValidationError("bias must be a finite vector of length C")
        if self.target_space not in ("class", "group"):
            raise ValidationError("target_space must be 'class' or 'group'")

    @property
    def n_targets(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if self.normalize:
            x = l2_normalize(x)
        z = x @ self.weights.T
        if self.bias is not None:
            z = z + self.bias
        return z[0] if single else z

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)  # ties resolve to lowest index


def l2_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norms, 1e-30)


class LossGradients(NamedTuple):
    weights: np.ndarray
    bias: np.ndarray | None


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def batch_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray | None,
    x: np.ndarray,
    targets: np.ndarray,
    offset: np.ndarray | None = None,
    sample_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Mean shifted cross-entropy over a batch plus exact gradients.

    ``offset`` is added to the logits before the softmax and is treated as a
    constant. ``sample_weights`` rescale per-sample losses (mean over the
    batch size, so uniform weights of 1 reproduce the unweighted loss).
    """
    z = x @ weights.T
    if bias is not None:
        z = z + bias
    if offset is not None:
        z = z + offset
    logp = _log_softmax(z)
    b = x.shape[0]
    if sample_weights is None:
        sample_weights = np.ones(b)
    loss = float(-(sample_weights * logp[np.arange(b), targets]).sum() / b)
    p = np.exp(logp)
    p[np.arange(b), targets] -= 1.0
    p *= sample_weights[:, None] / b
    grad_w = p.T @ x
    grad_b = p.sum(axis=0) if bias is not None else None
    return loss, grad_w, grad_b


def _single(scorer: LinearScorer, x: np.ndarray, target: int, offset: np.ndarray | None) -> tuple[float, LossGradients]:
    if not 0 <= target < scorer.n_targets:
        raise ValidationError(f"target {target} out of range for {scorer.n_targets} outputs")
    x = np.asarray(x, dtype=np.float64)
    if scorer.normalize:
        x = l2_normalize(x)
    loss, gw, gb = batch_loss_and_grad(scorer.weights, scorer.bias, x[None, :], np.array([target]), offset)
    return loss, LossGradients(gw, gb)


def ce_loss(scorer: LinearScorer, x: np.ndarray, target: int) -> tuple[float, LossGradients]:
    """Softmax cross-entropy at the raw logits."""
    return _single(scorer, x, target, None)


def la_loss(scorer: LinearScorer, x: np.ndarray, y: int, prior: GroupPrior) -> tuple[float, LossGradients]:
    """Cross-entropy at logits shifted by the log class prior."""
    if prior.prior.shape[0] != scorer.n_targets:
        raise ValidationError("prior length does not match scorer outputs")
    return _single(scorer, x, y, np.log(prior.prior))


def gla_loss(scorer: LinearScorer, x: np.ndarray, g: int, prior: GroupPrior) -> tuple[float, LossGradients]:
    """Cross-entropy at logits shifted by tau times the log group prior."""
    if prior.prior.shape[0] != scorer.n_targets:
        raise ValidationError("prior length does not match scorer outputs")
    return _single(scorer, x, g, prior.tau * np.log(prior.prior))


LOSS_KINDS = ("ce", "la", "gla")


def offset_for(loss_kind: str, prior: GroupPrior | None, n_targets: int) -> np.ndarray | None:
    if loss_kind == "ce":
        return None
    if loss_kind not in LOSS_KINDS:
        raise ValidationError(f"unknown loss kind {loss_kind!r}")
    if prior is None:
        raise ValidationError(f"{loss_kind} loss requires a prior")
    if prior.prior.shape[0] != n_targets:
        raise ValidationError("prior length does not match target count")
    scale = 1.0 if loss_kind == "la" else prior.tau
    return scale * np.log(prior.prior)


@dataclass
class TrainResult:
    scorer: LinearScorer
    snapshots: list[np.ndarray] = field(default_factory=list)  # weights after each epoch
    bias_snapshots: list[np.ndarray] | None = None
    epoch_losses: list[float] = field(default_factory=list)

    def scorer_at(self, epoch_index: int) -> LinearScorer:
        """Scorer as of a 0-based epoch snapshot."""
        bias = self.bias_snapshots[epoch_index] if self.bias_snapshots is not None else None
        return LinearScorer(
            weights=self.snapshots[epoch_index],
            bias=bias,
            target_space=self.scorer.target_space,
            normalize=self.scorer.normalize,
        )


def train(
    x: np.ndarray,
    targets: np.ndarray,
    loss_kind: str,
    prior: GroupPrior | None,
    cfg: TrainConfig,
    init: LinearScorer,
    sample_weights: np.ndarray | None = None,
) -> TrainResult:
    """Deterministic mini-batch SGD; returns final scorer and per-epoch snapshots.

    Inputs are consumed as-is (callers decide on normalization/projection
    beforehand); the returned scorers inherit ``init.normalize`` so that
    inference applies the same input transform the trainer saw.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValidationError("empty training set")
    if targets.shape != (n,):
        raise ValidationError("targets length does not match features")
    c = init.n_targets
    if targets.min() < 0 or targets.max() >= c:
        raise ValidationError("target out of range for scorer outputs")
    offset = offset_for(loss_kind, prior, c)
    w = init.weights.copy()
    b = init.bias.copy() if init.bias is not None else None
    vw = np.zeros_like(w)
    vb = np.zeros_like(b) if b is not None else None
    weights_all = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    snapshots: list[np.ndarray] = []
    bias_snapshots: list[np.ndarray] | None = [] if b is not None else None
    epoch_losses: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):  # final short batch kept
            idx = order[start : start + cfg.batch_size]
            loss, gw, gb = batch_loss_and_grad(w, b, x[idx], targets[idx], offset, weights_all[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            gw = gw + cfg.weight_decay * w
            vw = cfg.momentum * vw + gw
            w = w - lr * vw
            if b is not None:
                vb = cfg.momentum * vb + gb
                b = b - lr * vb
            running += loss * idx.shape[0]
        epoch_losses.append(running / n)
        snapshots.append(w.copy())
        if bias_snapshots is not None:
            bias_snapshots.append(b.copy())
    final = LinearScorer(weights=w, bias=b, target_space=init.target_space, normalize=init.normalize)
    return TrainResult(scorer=final, snapshots=snapshots, bias_snapshots=bias_snapshots, epoch_losses=epoch_losses)


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------


def save_model(scorer: LinearScorer, path: str | Path, provenance: dict | None = None) -> None:
    doc = {
        "target_space": scorer.target_space,
        "n_targets": scorer.n_targets,
        "dim": int(scorer.weights.shape[1]),
        "normalize": scorer.normalize,
        "weights": scorer.weights.flatten().tolist(),
        "bias": scorer.bias.tolist() if scorer.bias is not None else None,
        "provenance": provenance or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> tuple[LinearScorer, dict]:
    doc = json.loads(Path(path).read_text())
    weights = np.asarray(doc["weights"], dtype=np.float64).reshape(doc["n_targets"], doc["dim"])
    bias = np.asarray(doc["bias"], dtype=np.float64) if doc.get("bias") is not None else None
    scorer = LinearScorer(
        weights=weights, bias=bias, target_space=doc["target_space"], normalize=bool(doc["normalize"])
    )
    return scorer, doc.get("provenance", {})
