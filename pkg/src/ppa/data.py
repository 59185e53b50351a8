"""Feature datasets: binary container I/O, validation, synthesis, priors.

The on-disk container is little-endian throughout:

  features file:  magic "PPAF", version u32=1, N u64, d u32, K u32,
                  attr_count u32 (0 = unknown), flags u32 (bit0 attributes
                  present, bit1 splits present), N*d float32 row-major,
                  N u32 labels, [N u32 attributes], [N u8 split codes].
  proxy file:     magic "PPAZ", version u32=1, K u32, d u32, K*d float32.
  sidecar:        "<stem>.meta.json" with class/attribute names, provenance
                  and the normalization state of the stored features.

Features are stored as float32; all computation elsewhere upcasts to
float64. Ground-truth attributes ride along for evaluation only: training
code consumes ``TrainView``s, which do not carry them.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"PPAF"
PROXY_MAGIC = b"PPAZ"
CONTAINER_VERSION = 1

_HEADER = struct.Struct("<4sIQIII")
_PROXY_HEADER = struct.Struct("<4sIII")

FLAG_ATTRIBUTES = 1
FLAG_SPLITS = 2

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
SPLIT_CODES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}


class ContainerError(ValueError):
    """Corrupt or structurally invalid container bytes."""


class ValidationError(ValueError):
    """Well-formed container whose contents violate dataset invariants."""


@dataclass(frozen=True)
class TrainView:
    """What trainers are allowed to see: features and targets, no attributes."""

    features: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int64
    indices: np.ndarray  # positions within the parent dataset


@dataclass(frozen=True)
class FeatureDataset:
    features: np.ndarray  # (N, d) float32
    labels: np.ndarray  # (N,) int64, values in [0, class_count)
    attributes: np.ndarray | None  # (N,) int64 or None; evaluation-only
    split: np.ndarray  # (N,) uint8 codes from SPLIT_CODES
    class_count: int
    attribute_count: int | None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        split = np.asarray(self.split, dtype=np.uint8)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValidationError(f"features must be (N>=1, d>=1), got {feats.shape}")
        n = feats.shape[0]
        if not np.isfinite(feats).all():
            raise ValidationError("features contain NaN or Inf")
        if labels.shape != (n,):
            raise ValidationError("labels length does not match feature count")
        if self.class_count < 1:
            raise ValidationError("class_count must be >= 1")
        if labels.min(initial=0) < 0 or (n and labels.max() >= self.class_count):
            raise ValidationError("label out of range [0, class_count)")
        if split.shape != (n,):
            raise ValidationError("split length does not match feature count")
        if n and split.max() > SPLIT_TEST:
            raise ValidationError("unknown split code")
        if self.attributes is not None:
            attrs = np.asarray(self.attributes, dtype=np.int64)
            object.__setattr__(self, "attributes", attrs)
            if attrs.shape != (n,):
                raise ValidationError("attributes length does not match feature count")
            if self.attribute_count is None or self.attribute_count < 1:
                raise ValidationError("attributes present but attribute_count unknown")
            if attrs.min() < 0 or attrs.max() >= self.attribute_count:
                raise ValidationError("attribute out of range [0, attribute_count)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def split_indices(self, name: str) -> np.ndarray:
        return np.nonzero(self.split == SPLIT_CODES[name])[0]

    def view(self, name: str) -> TrainView:
        idx = self.split_indices(name)
        return TrainView(self.features[idx], self.labels[idx], idx)

    def attributes_for_eval(self, name: str) -> np.ndarray:
        """Ground-truth attributes of one split; evaluation/oracle use only."""
        if self.attributes is None:
            raise ValidationError("dataset has no ground-truth attributes")
        return self.attributes[self.split_indices(name)]


@dataclass(frozen=True)
class ClassProxyMatrix:
    proxies: np.ndarray  # (K, d) float32
    class_names: list[str] | None = None

    def __post_init__(self):
        p = np.asarray(self.proxies, dtype=np.float32)
        object.__setattr__(self, "proxies", p)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"proxies must be (K>=1, d>=1), got {p.shape}")
        if not np.isfinite(p).all():
            raise ValidationError("proxies contain NaN or Inf")
        norms = np.linalg.norm(p.astype(np.float64), axis=1)
        if (norms == 0).any():
            raise ValidationError("proxy row with zero norm")

    @property
    def k(self) -> int:
        return self.proxies.shape[0]

    @property
    def dim(self) -> int:
        return self.proxies.shape[1]


@dataclass(frozen=True)
class GroupPrior:
    """Strictly positive probability vector, optionally with an offset scale."""

    prior: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.prior, dtype=np.float64)
        object.__setattr__(self, "prior", p)
        if p.ndim != 1 or p.size < 2:
            raise ValidationError("prior must be a vector of length >= 2")
        if (p <= 0).any():
            raise ValidationError("prior entries must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("prior must sum to 1")
        if self.tau < 0:
            raise ValidationError("tau must be >= 0")


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def save_dataset(ds: FeatureDataset, path: str | Path) -> None:
    flags = FLAG_SPLITS
    if ds.attributes is not None:
        flags |= FLAG_ATTRIBUTES
    attr_count = ds.attribute_count or 0
    parts = [
        _HEADER.pack(FEATURE_MAGIC, CONTAINER_VERSION, ds.n, ds.dim, ds.class_count, attr_count, flags),
        np.ascontiguousarray(ds.features, dtype="<f4").tobytes(),
        ds.labels.astype("<u4").tobytes(),
    ]
    if ds.attributes is not None:
        parts.append(ds.attributes.astype("<u4").tobytes())
    parts.append(ds.split.astype("u1").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_dataset(path: str | Path) -> FeatureDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContainerError("file shorter than header")
    magic, version, n, d, k, attr_count, flags = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    has_attrs = bool(flags & FLAG_ATTRIBUTES)
    has_splits = bool(flags & FLAG_SPLITS)
    if has_attrs and attr_count == 0:
        raise ContainerError("attributes flagged but attr_count is 0")
    expected = _HEADER.size + n * d * 4 + n * 4 + (n * 4 if has_attrs else 0) + (n if has_splits else 0)
    if len(raw) != expected:
        raise ContainerError(f"payload length {len(raw)} does not match header (expected {expected})")
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += n * d * 4
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += n * 4
    attrs = None
    if has_attrs:
        attrs = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += n * 4
    if has_splits:
        split = np.frombuffer(raw, dtype="u1", count=n, offset=off).copy()
    else:
        split = np.zeros(n, dtype=np.uint8)
    meta = {}
    sc = sidecar_path(path)
    if sc.exists():
        meta = json.loads(sc.read_text())
    return FeatureDataset(
        features=feats,
        labels=labels,
        attributes=attrs,
        split=split,
        class_count=k,
        attribute_count=attr_count if attr_count > 0 else None,
        meta=meta,
    )


def save_proxies(z: ClassProxyMatrix, path: str | Path) -> None:
    payload = _PROXY_HEADER.pack(PROXY_MAGIC, CONTAINER_VERSION, z.k, z.dim)
    Path(path).write_bytes(payload + np.ascontiguousarray(z.proxies, dtype="<f4").tobytes())


def load_proxies(path: str | Path) -> ClassProxyMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _PROXY_HEADER.size:
        raise ContainerError("file shorter than header")
    magic, version, k, d = _PROXY_HEADER.unpack_from(raw)
    if magic != PROXY_MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if len(raw) != _PROXY_HEADER.size + k * d * 4:
        raise ContainerError("payload length does not match header")
    proxies = np.frombuffer(raw, dtype="<f4", count=k * d, offset=_PROXY_HEADER.size).reshape(k, d)
    names = None
    sc = sidecar_path(path)
    if sc.exists():
        names = json.loads(sc.read_text()).get("class_names")
    return ClassProxyMatrix(proxies=proxies, class_names=names)


def write_sidecar(
    path: str | Path,
    class_names: list[str] | None = None,
    attribute_names: list[str] | None = None,
    provenance: str = "",
    features_l2_normalized: bool | None = None,
) -> None:
    doc = {
        "class_names": class_names,
        "attribute_names": attribute_names,
        "provenance": provenance,
        "features_l2_normalized": features_l2_normalized,
    }
    sidecar_path(path).write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synthetic spurious-correlation benchmark
# ---------------------------------------------------------------------------

Cells = tuple[tuple[int, int], tuple[int, int]]  # [class][attribute] counts


@dataclass(frozen=True)
class SyntheticSpec:
    """Binary-class, binary-attribute Gaussian benchmark with exact quotas.

    Feature layout: ``core_dims`` class-signed dimensions, then
    ``spurious_dims`` attribute-signed dimensions, then pure-noise
    distractors. Class y flips the sign of the core mean, attribute a the
    sign of the spurious mean, so the two signals live in disjoint
    coordinates. Group cell counts are exact per split (quota assignment,
    not per-sample coin flips).
    """

    n_per_group: dict[str, Cells]  # split -> 2x2 cell counts
    core_mean_separation: float
    spurious_mean_separation: float
    noise_sigma: float
    spurious_correlation_rho: float | None
    feature_dim: int
    distractor_dims: int
    seed: int
    core_dims: int = 1
    spurious_dims: int = 1

    def __post_init__(self):
        if self.feature_dim < 2:
            raise ValidationError("feature_dim must be >= 2")
        if self.core_dims < 1 or self.spurious_dims < 1 or self.distractor_dims < 0:
            raise ValidationError("dimension counts out of range")
        if self.core_dims + self.spurious_dims + self.distractor_dims != self.feature_dim:
            raise ValidationError("core + spurious + distractor dims must equal feature_dim")
        if self.noise_sigma <= 0:
            raise ValidationError("noise_sigma must be positive")
        if "train" not in self.n_per_group:
            raise ValidationError("train split counts required")
        for split, cells in self.n_per_group.items():
            if split not in SPLIT_CODES:
                raise ValidationError(f"unknown split {split!r}")
            arr = np.asarray(cells)
            if arr.shape != (2, 2) or (arr < 0).any():
                raise ValidationError("cell counts must be a nonnegative 2x2 table")
        if sum(np.sum(c) for c in self.n_per_group.values()) < 1:
            raise ValidationError("empty synthetic dataset")
        if self.spurious_correlation_rho is not None:
            rho = self.spurious_correlation_rho
            if not 0.0 < rho < 1.0:
                raise ValidationError("rho must lie in (0, 1)")
            train = np.asarray(self.n_per_group["train"], dtype=np.int64)
            for y in range(2):
                total = train[y].sum()
                if total == 0:
                    continue
                # attribute a == y is the majority cell under rho
                expect = int(round(rho * total))
                if int(train[y][y]) != expect:
                    raise ValidationError(
                        f"class {y} majority cell {train[y][y]} inconsistent with rho={rho} (expected {expect})"
                    )

    @classmethod
    def from_rho(
        cls,
        rho: float,
        n_per_class: dict[str, tuple[int, int]],
        rho_splits: tuple[str, ...] = ("train", "val"),
        **kwargs,
    ) -> "SyntheticSpec":
        """Build cell tables from per-class totals, majority cell = rho share.

        Splits not listed in ``rho_splits`` are group-balanced within class.
        """
        cells: dict[str, Cells] = {}
        for split, (n0, n1) in n_per_class.items():
            table = []
            for y, n in enumerate((n0, n1)):
                share = rho if split in rho_splits else 0.5
                major = int(round(share * n))
                row = [0, 0]
                row[y] = major
                row[1 - y] = n - major
                table.append((row[0], row[1]))
            cells[split] = (table[0], table[1])
        return cls(n_per_group=cells, spurious_correlation_rho=rho if rho_splits else None, **kwargs)


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureDataset, ClassProxyMatrix]:
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    half_core = 0.5 * spec.core_mean_separation
    half_spur = 0.5 * spec.spurious_mean_separation
    blocks_x, blocks_y, blocks_a, blocks_s = [], [], [], []
    for split in ("train", "val", "test"):
        cells = spec.n_per_group.get(split)
        if cells is None:
            continue
        for y in range(2):
            for a in range(2):
                n = int(cells[y][a])
                if n == 0:
                    continue
                mean = np.zeros(d)
                mean[: spec.core_dims] = half_core if y == 1 else -half_core
                mean[spec.core_dims : spec.core_dims + spec.spurious_dims] = half_spur if a == 1 else -half_spur
                x = mean + rng.normal(0.0, spec.noise_sigma, size=(n, d))
                blocks_x.append(x)
                blocks_y.append(np.full(n, y, dtype=np.int64))
                blocks_a.append(np.full(n, a, dtype=np.int64))
                blocks_s.append(np.full(n, SPLIT_CODES[split], dtype=np.uint8))
    ds = FeatureDataset(
        features=np.concatenate(blocks_x).astype(np.float32),
        labels=np.concatenate(blocks_y),
        attributes=np.concatenate(blocks_a),
        split=np.concatenate(blocks_s),
        class_count=2,
        attribute_count=2,
        meta={"synthetic_seed": spec.seed},
    )
    proxies = np.zeros((2, d))
    unit = 1.0 / math.sqrt(spec.core_dims)
    proxies[0, : spec.core_dims] = -unit
    proxies[1, : spec.core_dims] = unit
    return ds, ClassProxyMatrix(proxies=proxies.astype(np.float32))


def balanced_bayes_worst_group_accuracy(spec: SyntheticSpec) -> float:
    """Per-group accuracy of the group-balanced Bayes rule, in closed form.

    Under group balance the attribute carries no class information, so the
    optimal rule thresholds the core coordinates at zero; every group then
    succeeds with probability Phi(separation * sqrt(core_dims) / (2 sigma)).
    """
    z = spec.core_mean_separation * math.sqrt(spec.core_dims) / (2.0 * spec.noise_sigma)
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# priors and pseudo-label noise
# ---------------------------------------------------------------------------


def empirical_class_prior(ds: FeatureDataset, smoothing: float = 1.0) -> GroupPrior:
    """Smoothed class frequencies over the train split."""
    labels = ds.view("train").labels
    if labels.size == 0:
        raise ValidationError("train split is empty")
    counts = np.bincount(labels, minlength=ds.class_count).astype(np.float64)
    counts += smoothing
    return GroupPrior(prior=counts / counts.sum())


def inject_pseudo_label_noise(pseudo_attr: np.ndarray, p: float, seed: int, attr_values: int = 2) -> np.ndarray:
    """Resample the pseudo-attribute of round(p*N) samples uniformly.

    Only the attribute component of the pseudo-group changes; the class half
    stays with the sample. Selection is without replacement and exact in
    count, so p=0 is the identity.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError("noise fraction must lie in [0, 1]")
    out = np.asarray(pseudo_attr, dtype=np.int64).copy()
    n = out.shape[0]
    k = int(math.floor(p * n + 0.5))
    if k == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    out[chosen] = rng.integers(0, attr_values, size=k)
    return out


# ---------------------------------------------------------------------------
# named presets
# ---------------------------------------------------------------------------


def _waterbirds_like(seed: int, rho: float) -> SyntheticSpec:
    # class ratio mirrors the bird benchmark this stands in for (23/77 split,
    # majority attribute share rho within each class); every split is drawn
    # in-distribution, with desk-scale val/test sizes chosen so worst-group
    # estimates resolve to a couple of points
    return SyntheticSpec.from_rho(
        rho=rho,
        n_per_class={"train": (3071, 929), "val": (7680, 2320), "test": (15400, 4600)},
        rho_splits=("train", "val", "test"),
        core_mean_separation=2.0,
        spurious_mean_separation=4.0,
        noise_sigma=1.0,
        feature_dim=16,
        distractor_dims=13,
        spurious_dims=2,
        seed=seed,
    )


def _celeba_like(seed: int) -> SyntheticSpec:
    # hair-color-style imbalance: both classes skewed toward one attribute,
    # minority class nearly attribute-pure, majority class close to balanced
    cells: dict[str, Cells] = {
        "train": ((1643, 1760), (34, 563)),
        "val": ((410, 440), (9, 141)),
        "test": ((1760, 1760), (32, 448)),
    }
    return SyntheticSpec(
        n_per_group=cells,
        core_mean_separation=2.0,
        spurious_mean_separation=4.0,
        noise_sigma=1.0,
        spurious_correlation_rho=None,
        feature_dim=16,
        distractor_dims=14,
        seed=seed,
    )


PRESETS = {
    "synthetic-waterbirds": lambda seed: _waterbirds_like(seed, 0.95),
    "synthetic-balanced": lambda seed: _waterbirds_like(seed, 0.5),
    "synthetic-celeba-like": _celeba_like,
}


def build_preset(name: str, seed: int) -> tuple[FeatureDataset, ClassProxyMatrix, SyntheticSpec]:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r} (have: {', '.join(sorted(PRESETS))})")
    spec = PRESETS[name](seed)
    ds, proxies = generate_synthetic(spec)
    return ds, proxies, spec
