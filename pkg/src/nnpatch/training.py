"""Subject construction: a reproducible SGD-trained MLP over a declared
data source, with the four-way split (and optional drift) baked into the
spec so the same spec always yields the same subject."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DriftSpec, SplitSpec, apply_drift, load_dataset, split
from .network import Batch, Model, build_mlp, full_gradients, loss
from .synth import make_clusters


@dataclass(frozen=True)
class SubjectSpec:
    """Everything needed to rebuild the subject model bit-for-bit."""

    layer_sizes: tuple[int, ...]
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int
    source: dict
    split: SplitSpec
    drift: DriftSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def load_source(source: dict) -> Dataset:
    """Materialize the declared data source."""
    kind = source.get("kind")
    if kind == "clusters":
        params = {k: v for k, v in source.items() if k != "kind"}
        return make_clusters(**params)
    if kind == "file":
        return load_dataset(source["path"])
    raise ValueError(f"unknown data source kind {kind!r}")


def materialize_splits(spec: SubjectSpec):
    """(dataset, (train, validation, repair, test)) for a subject spec."""
    dataset = load_source(spec.source)
    if spec.drift is not None:
        splits = apply_drift(dataset, spec.split, spec.drift)
    else:
        splits = split(dataset, spec.split)
    return dataset, splits


def train_subject(spec: SubjectSpec, splits=None) -> Model:
    """Plain minibatch SGD on the train split; deterministic per spec.

    0 epochs returns the seeded initialization untouched. Non-finite
    training loss aborts with the offending epoch index.
    """
    if splits is None:
        _, splits = materialize_splits(spec)
    train = splits[0]
    model = build_mlp(spec.layer_sizes, seed=spec.seed)
    if spec.epochs == 0:
        return model
    if len(train) == 0:
        raise ValueError("cannot train on an empty train split")
    if train.n_features != model.input_size or int(train.labels.max()) >= model.n_classes:
        raise ValueError("train split does not fit the declared architecture")

    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 1)))
    full = train.as_batch()
    n = len(train)

    def snapshot(epoch: int) -> Model:
        # Model construction rejects non-finite weights; surface that as divergence
        try:
            return Model(model.layers, tuple(weights), tuple(biases))
        except ValueError as exc:
            raise RuntimeError(f"training diverged at epoch {epoch}: {exc}") from exc

    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            batch = Batch(
                train.features[idx],
                train.labels[idx],
                tuple(train.sample_ids[k] for k in idx),
            )
            grad_w, grad_b = full_gradients(snapshot(epoch), batch)
            for k in range(len(weights)):
                weights[k] -= spec.learning_rate * grad_w[k]
                biases[k] -= spec.learning_rate * grad_b[k]
        if not np.isfinite(loss(snapshot(epoch), full)):
            raise RuntimeError(f"training diverged (non-finite loss) at epoch {epoch}")

    return snapshot(spec.epochs)
