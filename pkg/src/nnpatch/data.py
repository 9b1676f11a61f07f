"""Datasets, four-way splitting, drift scenarios, repair-input selection,
and the on-disk formats for models and datasets.

Formats are deliberately boring: CSV with a version comment for datasets,
JSON with inline base64 float64 arrays for models. Both are diffable and
round-trip bit-exactly.
"""
from __future__ import annotations

import base64
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .network import Batch, LayerSpec, Model, WeightRef, forward, _frozen_array

DATASET_MAGIC = "# nnpatch-dataset v1"
MODEL_FORMAT = "nnpatch-model"
MODEL_VERSION = 1

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")

SPLIT_NAMES = ("train", "validation", "repair", "test")


class RepairInputError(RuntimeError):
    """Repair input selection could not produce usable sample sets."""


class NothingToRepairError(RepairInputError):
    """The subject makes no mistakes on the target class in the repair split."""


@dataclass(frozen=True)
class Dataset:
    """Tabular classification data with stable per-sample ids."""

    features: np.ndarray
    labels: np.ndarray
    sample_ids: tuple[str, ...]
    n_classes: int
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        feats = _frozen_array(self.features, np.float64)
        labels = _frozen_array(self.labels, np.int64)
        ids = tuple(str(s) for s in self.sample_ids)
        names = tuple(str(c) for c in self.class_names)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "class_names", names)
        if feats.ndim != 2:
            raise ValueError("features must be 2-D (n_samples, n_features)")
        n = feats.shape[0]
        if labels.shape != (n,) or len(ids) != n:
            raise ValueError("features, labels and sample_ids must agree on sample count")
        if len(set(ids)) != n:
            raise ValueError("sample_ids must be globally unique")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(names) != self.n_classes:
            raise ValueError("class_names must list one name per class")
        if n:
            if not np.isfinite(feats).all():
                raise ValueError("features must be finite")
            if labels.min() < 0 or labels.max() >= self.n_classes:
                raise ValueError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels, self.sample_ids)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            tuple(self.sample_ids[k] for k in idx),
            self.n_classes,
            self.class_names,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Fractions for the train/validation/repair/test partition."""

    train: float
    validation: float
    repair: float
    test: float
    seed: int = 0
    stratified: bool = True

    def __post_init__(self) -> None:
        fr = self.fractions
        if any(f <= 0.0 or f > 1.0 for f in fr):
            raise ValueError("all four fractions must lie in (0, 1]")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(fr)!r}")

    @property
    def fractions(self) -> tuple[float, float, float, float]:
        return (self.train, self.validation, self.repair, self.test)


@dataclass(frozen=True)
class DriftSpec:
    """Prevalence shift for one class between training time and repair time.

    Each fraction says how much of the class's natural per-split allocation
    is kept; dropped samples leave the dataset entirely. Equal fractions of
    1.0 reduce to the plain split.
    """

    target_class: int
    train_fraction_of_class: float
    repair_fraction_of_class: float
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_fraction_of_class", "repair_fraction_of_class"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.train_fraction_of_class > self.repair_fraction_of_class:
            raise ValueError(
                "train_fraction_of_class must not exceed repair_fraction_of_class"
            )


@dataclass(frozen=True)
class RepairInputs:
    """Sample sets driving a repair: passing train samples and the failing
    target-class samples from the repair split."""

    positive_pool: Batch
    negative_set: Batch
    target_class: int

    def __post_init__(self) -> None:
        pos = set(self.positive_pool.sample_ids)
        neg = set(self.negative_set.sample_ids)
        if pos & neg:
            raise ValueError("positive pool and negative set must be disjoint")
        if len(self.negative_set) == 0:
            raise NothingToRepairError("negative set is empty; nothing to repair")


def _largest_remainder(n: int, fractions, rotate: int) -> list[int]:
    """Integer allocation of n items proportional to fractions.

    Sums to n exactly. Remainder ties go to splits in rotated order so no
    split is systematically favored across classes.
    """
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    short = n - sum(counts)
    order = sorted(
        range(len(fractions)),
        key=lambda s: (-(quotas[s] - counts[s]), (s - rotate) % len(fractions)),
    )
    for s in order[:short]:
        counts[s] += 1
    return counts


def split(dataset: Dataset, spec: SplitSpec):
    """Partition into (train, validation, repair, test) Datasets.

    Deterministic per seed; stratified mode allocates per class with
    largest-remainder rounding. Output rows keep dataset order.
    """
    rng = np.random.default_rng(spec.seed)
    buckets: list[list[int]] = [[], [], [], []]

    def _allocate(indices: np.ndarray, rotate: int) -> None:
        perm = rng.permutation(indices)
        counts = _largest_remainder(len(indices), spec.fractions, rotate)
        start = 0
        for s, c in enumerate(counts):
            buckets[s].extend(perm[start : start + c].tolist())
            start += c

    if spec.stratified:
        for c in range(dataset.n_classes):
            members = np.flatnonzero(dataset.labels == c)
            if len(members) == 0:
                raise ValueError(f"stratified split needs >= 1 sample of class {c}")
            _allocate(members, rotate=c)
    else:
        _allocate(np.arange(len(dataset)), rotate=0)

    return tuple(dataset.subset(sorted(b)) for b in buckets)


def _subsample_class(ds: Dataset, target: int, fraction: float, rng) -> Dataset:
    members = np.flatnonzero(ds.labels == target)
    keep_n = int(round(fraction * len(members)))
    if keep_n >= len(members):
        return ds
    kept = rng.choice(members, size=keep_n, replace=False) if keep_n else np.array([], dtype=np.int64)
    drop = set(members.tolist()) - set(np.asarray(kept, dtype=np.int64).tolist())
    remaining = [k for k in range(len(ds)) if k not in drop]
    return ds.subset(remaining)


def apply_drift(dataset: Dataset, split_spec: SplitSpec, drift: DriftSpec):
    """Split, then thin the target class in the train and repair splits.

    The target class ends up at train_fraction_of_class (resp.
    repair_fraction_of_class) of its natural allocation in those splits,
    so its prevalence at repair time is at least its prevalence at
    training time.
    """
    if not 0 <= drift.target_class < dataset.n_classes:
        raise ValueError(f"target class {drift.target_class} out of range")
    total = int(np.sum(dataset.labels == drift.target_class))
    if total == 0:
        raise ValueError(
            f"drift infeasible: class {drift.target_class} has 0 samples in the dataset"
        )
    train, val, rep, test = split(dataset, split_spec)
    rng = np.random.default_rng(drift.seed)
    train = _subsample_class(train, drift.target_class, drift.train_fraction_of_class, rng)
    rep = _subsample_class(rep, drift.target_class, drift.repair_fraction_of_class, rng)
    return train, val, rep, test


def predictions(model: Model, batch: Batch) -> np.ndarray:
    """Predicted class per sample; argmax ties resolve to the lowest ordinal."""
    if len(batch) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(forward(model, batch), axis=1).astype(np.int64)


def select_repair_inputs(
    model: Model, train_split: Dataset, repair_split: Dataset, target_class: int
) -> RepairInputs:
    """Build RepairInputs from the subject's verdicts.

    positive_pool: train samples (any class) the model classifies correctly.
    negative_set: repair-split samples of the target class it gets wrong.
    """
    if not 0 <= target_class < train_split.n_classes:
        raise ValueError(f"target class {target_class} out of range")
    train_batch = train_split.as_batch()
    pass_mask = predictions(model, train_batch) == train_batch.labels
    if not pass_mask.any():
        raise RepairInputError("positive pool is empty: the model passes no training sample")
    pos_idx = np.flatnonzero(pass_mask)

    repair_batch = repair_split.as_batch()
    pred = predictions(model, repair_batch)
    neg_mask = (repair_batch.labels == target_class) & (pred != repair_batch.labels)
    if not neg_mask.any():
        raise NothingToRepairError(
            f"nothing to repair: no misclassified class-{target_class} samples in the repair split"
        )
    neg_idx = np.flatnonzero(neg_mask)

    def _take(batch: Batch, idx: np.ndarray) -> Batch:
        return Batch(
            batch.inputs[idx],
            batch.labels[idx],
            tuple(batch.sample_ids[k] for k in idx),
        )

    return RepairInputs(_take(train_batch, pos_idx), _take(repair_batch, neg_idx), target_class)


def take_sample(batch: Batch, n: int, seed: int) -> Batch:
    """Uniform sample of min(n, len) members without replacement, original order."""
    if n < 0:
        raise ValueError("sample size must be >= 0")
    if n >= len(batch):
        return batch
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(batch), size=n, replace=False))
    return Batch(
        batch.inputs[idx],
        batch.labels[idx],
        tuple(batch.sample_ids[k] for k in idx),
    )


# ---------------------------------------------------------------------------
# serialization

def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise ValueError(f"corrupt model file: bad array encoding ({exc})") from exc
    expect = 8 * int(np.prod(shape))
    if len(raw) != expect:
        raise ValueError(f"corrupt model file: array has {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_model(model: Model, path, provenance: dict | None = None) -> None:
    """Write a model as a single JSON document (version header, layer specs,
    base64 little-endian float64 arrays). Byte-stable for identical models."""
    manifest = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_classes": model.n_classes,
        "layers": [
            {
                "input_size": s.input_size,
                "output_size": s.output_size,
                "activation": s.activation,
                "kind": s.kind,
            }
            for s in model.layers
        ],
        "weights": [_encode_array(w) for w in model.weights],
        "biases": [_encode_array(b) for b in model.biases],
    }
    if provenance is not None:
        manifest["provenance"] = provenance
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def load_model(path) -> Model:
    """Inverse of save_model. Rejects malformed files, version mismatches and
    non-finite values; never returns a partial model."""
    with open(path, "r", encoding="ascii") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt model file: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != MODEL_FORMAT:
        raise ValueError("not a model file")
    if manifest.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {manifest.get('version')!r}")
    try:
        specs = tuple(
            LayerSpec(
                int(l["input_size"]), int(l["output_size"]), str(l["activation"]), str(l["kind"])
            )
            for l in manifest["layers"]
        )
        weights = tuple(
            _decode_array(t, (s.input_size, s.output_size))
            for t, s in zip(manifest["weights"], specs, strict=True)
        )
        biases = tuple(
            _decode_array(t, (s.output_size,))
            for t, s in zip(manifest["biases"], specs, strict=True)
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"corrupt model file: missing field ({exc})") from exc
    return Model(specs, weights, biases)


def save_dataset(dataset: Dataset, path) -> None:
    """CSV with a version comment line, then `id,label,f0..f{d-1}` rows.

    Floats are written with repr so the round-trip is bit-exact.
    """
    for name in dataset.class_names:
        if not _NAME_RE.match(name):
            raise ValueError(f"class name {name!r} not storable (letters/digits/_.- only)")
    d = dataset.n_features
    lines = [
        f"{DATASET_MAGIC} n_classes={dataset.n_classes} class_names={','.join(dataset.class_names)}",
        ",".join(["id", "label"] + [f"f{k}" for k in range(d)]),
    ]
    for sid, label, row in zip(dataset.sample_ids, dataset.labels, dataset.features):
        if not _NAME_RE.match(sid):
            raise ValueError(f"sample id {sid!r} not storable (letters/digits/_.- only)")
        lines.append(",".join([sid, str(int(label))] + [repr(float(v)) for v in row]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_dataset(path) -> Dataset:
    """Inverse of save_dataset; rejects files without the version line."""
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(DATASET_MAGIC):
        raise ValueError("not a dataset file (missing version line)")
    m = re.search(r"n_classes=(\d+) class_names=(\S*)", lines[0])
    if m is None:
        raise ValueError("corrupt dataset file: bad metadata line")
    n_classes = int(m.group(1))
    class_names = tuple(m.group(2).split(",")) if m.group(2) else ()
    if len(lines) < 2 or not lines[1].startswith("id,label"):
        raise ValueError("corrupt dataset file: missing column header")
    n_features = len(lines[1].split(",")) - 2
    ids, labels, rows = [], [], []
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != n_features + 2:
            raise ValueError(f"corrupt dataset file: row has {len(parts)} fields")
        ids.append(parts[0])
        labels.append(int(parts[1]))
        rows.append([float(v) for v in parts[2:]])
    feats = np.array(rows, dtype=np.float64).reshape(len(ids), n_features)
    return Dataset(feats, np.array(labels, dtype=np.int64), tuple(ids), n_classes, class_names)
