"""Project-probe-aggregate orchestration plus ERM/JTT baselines and the oracle variant.

Stage 1 trains a deliberately biased class head on features with the proxy
directions projected out (class-prior logit adjustment keeps it off class
frequencies). Stage 2 turns its train-split mistakes into pseudo-groups and
probes group targets with a prior offset. Stage 3 collapses the group head
back to a class head by summing the weight rows of each class's groups,
which by linearity equals summing group logits at inference time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    ClassProxyMatrix,
    FeatureDataset,
    GroupPrior,
    ValidationError,
    empirical_class_prior,
    inject_pseudo_label_noise,
)
from .evaluation import select_model
from .probe import LinearScorer, TrainConfig, TrainResult, l2_normalize, train
from .projection import build_projection, project_features

DEFAULT_TAU = 1.0
TAU_SWEEP_GRID = (0.8, 0.9, 1.0, 1.1, 1.2)

# Schedule sized for high-dimensional unit-norm embedding exports. On the
# 16-d synthetic benchmark this deliberately under-trains, which is exactly
# what a stage-1 head should do: staying close to its init keeps it biased,
# so it is also the comparator schedule for identification studies.
EMBEDDING_SCALE_RECIPE = TrainConfig(learning_rate=2e-4, warmup_lr=1e-5)


@dataclass(frozen=True)
class PseudoGrouping:
    """Per-train-sample pseudo-groups from biased-model mistakes."""

    pseudo_attribute: np.ndarray  # (n_train,) 0/1
    group_index: np.ndarray  # (n_train,) g = y * 2 + a_hat
    group_counts: np.ndarray  # (2K,)
    class_count: int

    def __post_init__(self):
        if int(self.group_counts.sum()) != self.pseudo_attribute.shape[0]:
            raise ValidationError("group counts do not partition the train split")

    @property
    def n_groups(self) -> int:
        return 2 * self.class_count


@dataclass(frozen=True)
class DebiasedClassifier:
    scorer: LinearScorer  # class-space head built by aggregation
    provenance: dict


@dataclass
class PipelineRun:
    classifier: DebiasedClassifier
    group_head: LinearScorer
    grouping: PseudoGrouping
    selected_epoch: int
    manifest: dict


def _prepared(ds: FeatureDataset, split: str, normalize: bool) -> tuple[np.ndarray, np.ndarray]:
    view = ds.view(split)
    if view.features.shape[0] == 0:
        raise ValidationError(f"split {split!r} is empty")
    x = view.features.astype(np.float64)
    if normalize:
        x = l2_normalize(x)
    return x, view.labels


def zero_init(n_targets: int, dim: int, target_space: str, normalize: bool) -> LinearScorer:
    return LinearScorer(np.zeros((n_targets, dim)), target_space=target_space, normalize=normalize)


def proxy_init(z: ClassProxyMatrix, normalize: bool, group_space: bool = False) -> LinearScorer:
    """Head initialized from unit-normalized proxy rows.

    For group heads every class row is duplicated across that class's two
    pseudo-groups. With synthetic proxies this starts heads at the exact core
    directions, which the default zero init deliberately avoids.
    """
    rows = z.proxies.astype(np.float64)
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    if group_space:
        rows = np.repeat(rows, 2, axis=0)
        return LinearScorer(rows, target_space="group", normalize=normalize)
    return LinearScorer(rows, target_space="class", normalize=normalize)


def train_biased(
    ds: FeatureDataset,
    z: ClassProxyMatrix,
    cfg: TrainConfig,
    normalize: bool = True,
    project: bool = True,
    loss_kind: str = "la",
    init: LinearScorer | None = None,
    tol: float = 1e-10,
) -> tuple[LinearScorer, TrainResult, int]:
    """Stage-1 biased head; returns (scorer with projector baked in, result, rank).

    The returned scorer stores W @ Pi so inference is a single matmul and is
    invariant to adding any proxy-direction component to an input.
    """
    if z.k != ds.class_count:
        raise ValidationError("proxy row count does not match class_count")
    if z.dim != ds.dim:
        raise ValidationError("proxy dimension does not match feature dimension")
    x, y = _prepared(ds, "train", normalize)
    rank = ds.class_count
    pi = None
    if project:
        op = build_projection(z, tol)
        pi = op.pi
        rank = op.source_rank
        x = project_features(op, x)
    if init is None:
        init = zero_init(ds.class_count, ds.dim, "class", normalize)
    prior = empirical_class_prior(ds) if loss_kind == "la" else None
    result = train(x, y, loss_kind, prior, cfg, init)
    w = result.scorer.weights
    if pi is not None:
        w = w @ pi  # bake the projector in
    scorer = LinearScorer(w, target_space="class", normalize=normalize)
    return scorer, result, rank


def infer_pseudo_groups(biased: LinearScorer, ds: FeatureDataset) -> PseudoGrouping:
    """Pseudo-attribute is 1 exactly where the biased head misclassifies."""
    if biased.n_targets != ds.class_count:
        raise ValidationError("biased scorer is not a class-space head")
    view = ds.view("train")
    pred = biased.predict(view.features.astype(np.float64))
    a_hat = (pred != view.labels).astype(np.int64)
    g = view.labels * 2 + a_hat
    counts = np.bincount(g, minlength=2 * ds.class_count)
    return PseudoGrouping(a_hat, g, counts, ds.class_count)


def group_prior_from_counts(counts: np.ndarray, tau: float, smoothing: float = 1.0) -> GroupPrior:
    c = np.asarray(counts, dtype=np.float64) + smoothing
    return GroupPrior(prior=c / c.sum(), tau=tau)


def aggregate_group_weights(group_weights: np.ndarray, class_count: int) -> np.ndarray:
    """Sum each class's group rows: w_y = sum of rows {y*A .. y*A+A-1}."""
    rows, dim = group_weights.shape
    if rows % class_count != 0:
        raise ValidationError("group rows do not divide evenly into classes")
    per = rows // class_count
    return group_weights.reshape(class_count, per, dim).sum(axis=1)


def train_debiased(
    ds: FeatureDataset,
    grouping: PseudoGrouping,
    tau: float,
    cfg: TrainConfig,
    normalize: bool = True,
    select: str = "wga",
    init: LinearScorer | None = None,
) -> tuple[LinearScorer, DebiasedClassifier, int]:
    """Stage 2+3: group-target probe with prior offset, then weight aggregation.

    Snapshot selection runs on the aggregated class head (the model that gets
    reported), using validation worst-group accuracy; ``select='last'`` skips
    it and keeps the final epoch.
    """
    x, y = _prepared(ds, "train", normalize)
    if grouping.group_index.shape[0] != y.shape[0]:
        raise ValidationError("grouping does not cover the train split")
    n_groups = grouping.n_groups
    if init is None:
        init = zero_init(n_groups, ds.dim, "group", normalize)
    prior = group_prior_from_counts(grouping.group_counts, tau)
    result = train(x, grouping.group_index, "gla", prior, cfg, init)
    aggregated = [
        LinearScorer(aggregate_group_weights(w, ds.class_count), target_space="class", normalize=normalize)
        for w in result.snapshots
    ]
    if select in ("wga", "avg"):
        scorer, epoch_idx, _ = select_model(aggregated, ds, "val", criterion=select)
        group_head = result.scorer_at(epoch_idx)
    elif select == "last":
        scorer, epoch_idx, group_head = aggregated[-1], len(aggregated) - 1, result.scorer
    else:
        raise ValidationError(f"unknown selection mode {select!r}")
    classifier = DebiasedClassifier(
        scorer=scorer,
        provenance={
            "tau": tau,
            "seed": cfg.seed,
            "normalize": normalize,
            "selected_epoch": epoch_idx + 1,
            "group_counts": grouping.group_counts.tolist(),
        },
    )
    return group_head, classifier, epoch_idx


def run_ppa(
    ds: FeatureDataset,
    z: ClassProxyMatrix,
    tau: float = DEFAULT_TAU,
    cfg: TrainConfig | None = None,
    normalize: bool = True,
    project: bool = True,
    noise_fraction: float = 0.0,
    select: str = "wga",
    stage1_cfg: TrainConfig | None = None,
) -> PipelineRun:
    """Full pipeline; ``project=False`` gives the no-projection ablation.

    The stage-1 head trains on the bias-preserving embedding-scale schedule
    from the proxy init unless ``stage1_cfg`` overrides it; a converged
    stage-1 head stops being usefully biased. ``noise_fraction`` resamples
    that share of pseudo-attributes before the probe stage.
    """
    cfg = cfg or TrainConfig()
    if stage1_cfg is None:
        stage1_cfg = replace(EMBEDDING_SCALE_RECIPE, seed=cfg.seed)
    timings = {}
    t0 = time.perf_counter()
    biased, _, rank = train_biased(
        ds, z, stage1_cfg, normalize=normalize, project=project, init=proxy_init(z, normalize)
    )
    timings["biased_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    grouping = infer_pseudo_groups(biased, ds)
    if noise_fraction > 0.0:
        noisy = inject_pseudo_label_noise(grouping.pseudo_attribute, noise_fraction, seed=cfg.seed + 7919)
        labels = ds.view("train").labels
        g = labels * 2 + noisy
        grouping = PseudoGrouping(noisy, g, np.bincount(g, minlength=2 * ds.class_count), ds.class_count)
    timings["grouping_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    group_head, classifier, epoch_idx = train_debiased(ds, grouping, tau, cfg, normalize=normalize, select=select)
    timings["debiased_s"] = time.perf_counter() - t0
    manifest = {
        "method": "ppa",
        "tau": tau,
        "seed": cfg.seed,
        "normalize": normalize,
        "project": project,
        "proxy_rank": rank,
        "noise_fraction": noise_fraction,
        "pseudo_group_counts": grouping.group_counts.tolist(),
        "selected_epoch": epoch_idx + 1,
        "timings": timings,
    }
    if ds.attributes is not None:
        true_minority = ds.attributes_for_eval("train") != ds.view("train").labels
        identified = grouping.pseudo_attribute == 1
        hit = int((identified & true_minority).sum())
        manifest["pseudo_minority_precision"] = hit / max(int(identified.sum()), 1)
        manifest["pseudo_minority_recall"] = hit / max(int(true_minority.sum()), 1)
    return PipelineRun(classifier, group_head, grouping, epoch_idx, manifest)


def train_erm(
    ds: FeatureDataset,
    cfg: TrainConfig,
    normalize: bool = True,
    select: str = "avg",
    init: LinearScorer | None = None,
    sample_weights: np.ndarray | None = None,
) -> tuple[LinearScorer, int, TrainResult]:
    """Plain cross-entropy class head on raw features (the un-debiased baseline).

    Defaults to average-accuracy checkpoint selection, the usual rule for
    plain baselines; worst-group selection would quietly turn the baseline
    into a (weak) debiasing method.
    """
    x, y = _prepared(ds, "train", normalize)
    if init is None:
        init = zero_init(ds.class_count, ds.dim, "class", normalize)
    result = train(x, y, "ce", None, cfg, init, sample_weights=sample_weights)
    snapshots = [result.scorer_at(i) for i in range(len(result.snapshots))]
    if select in ("wga", "avg"):
        scorer, epoch_idx, _ = select_model(snapshots, ds, "val", criterion=select)
    elif select == "last":
        scorer, epoch_idx = result.scorer, len(snapshots) - 1
    else:
        raise ValidationError(f"unknown selection mode {select!r}")
    return scorer, epoch_idx, result


def train_jtt(
    ds: FeatureDataset,
    stage1: LinearScorer,
    lam: float,
    cfg: TrainConfig,
    normalize: bool = True,
    select: str = "wga",
) -> tuple[LinearScorer, int, np.ndarray]:
    """Two-stage upweighting baseline: weight the stage-1 error set by lambda."""
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    view = ds.view("train")
    pred = stage1.predict(view.features.astype(np.float64))
    error_set = pred != view.labels
    weights = np.where(error_set, lam, 1.0)
    scorer, epoch_idx, _ = train_erm(ds, cfg, normalize=normalize, select=select, sample_weights=weights)
    return scorer, epoch_idx, error_set


def train_gt_gla(
    ds: FeatureDataset,
    tau: float,
    cfg: TrainConfig,
    normalize: bool = True,
    select: str = "wga",
) -> tuple[LinearScorer, DebiasedClassifier, int]:
    """Oracle variant: groups come from ground-truth attributes, not the biased head."""
    if ds.attributes is None:
        raise ValidationError("ground-truth group training requires attributes")
    labels = ds.view("train").labels
    attrs = ds.attributes_for_eval("train")
    if ds.attribute_count != 2:
        raise ValidationError("oracle grouping currently supports binary attributes")
    g = labels * 2 + attrs
    counts = np.bincount(g, minlength=2 * ds.class_count)
    grouping = PseudoGrouping(attrs.copy(), g, counts, ds.class_count)
    return train_debiased(ds, grouping, tau, cfg, normalize=normalize, select=select)
