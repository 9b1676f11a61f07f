"""Config file loading.

Configs are versioned YAML documents with sections: dataset, split,
subject, experiment, and optionally drift, repair (search knobs) and
localization. They are the single source of hyperparameters; CLI --seed
only overrides the seed relevant to the verb at hand.
"""
from __future__ import annotations

import yaml

from .data import DriftSpec, SplitSpec
from .harness import ExperimentSpec, GridEntry
from .training import SubjectSpec, load_source

CONFIG_VERSION = 1


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a mapping")
    version = cfg.get("config_version")
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config_version {version!r} (expected {CONFIG_VERSION})")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ValueError(f"config is missing the '{name}' section")
    sect = cfg[name]
    if not isinstance(sect, dict):
        raise ValueError(f"config section '{name}' must be a mapping")
    return sect


def dataset_from_config(cfg: dict, seed: int | None = None):
    sect = dict(_section(cfg, "dataset"))
    if seed is not None:
        sect["seed"] = seed
    return load_source(sect)


def split_spec_from_config(cfg: dict, seed: int | None = None) -> SplitSpec:
    sect = dict(_section(cfg, "split"))
    if seed is not None:
        sect["seed"] = seed
    return SplitSpec(
        train=float(sect["train"]),
        validation=float(sect["validation"]),
        repair=float(sect["repair"]),
        test=float(sect["test"]),
        seed=int(sect.get("seed", 0)),
        stratified=bool(sect.get("stratified", True)),
    )


def drift_spec_from_config(cfg: dict, seed: int | None = None) -> DriftSpec | None:
    if "drift" not in cfg or cfg["drift"] is None:
        return None
    sect = dict(_section(cfg, "drift"))
    if seed is not None:
        sect["seed"] = seed
    return DriftSpec(
        target_class=int(sect["target_class"]),
        train_fraction_of_class=float(sect["train_fraction_of_class"]),
        repair_fraction_of_class=float(sect["repair_fraction_of_class"]),
        seed=int(sect.get("seed", 0)),
    )


def subject_spec_from_config(cfg: dict, seed: int | None = None) -> SubjectSpec:
    sect = _section(cfg, "subject")
    return SubjectSpec(
        layer_sizes=tuple(int(s) for s in sect["layer_sizes"]),
        epochs=int(sect["epochs"]),
        learning_rate=float(sect["learning_rate"]),
        batch_size=int(sect["batch_size"]),
        seed=int(sect["seed"] if seed is None else seed),
        source=dict(_section(cfg, "dataset")),
        split=split_spec_from_config(cfg),
        drift=drift_spec_from_config(cfg),
    )


def experiment_spec_from_config(cfg: dict, master_seed: int | None = None) -> ExperimentSpec:
    sect = _section(cfg, "experiment")
    search = cfg.get("repair", {}) or {}
    grid = tuple(GridEntry.from_dict(e) for e in sect["grid"])
    return ExperimentSpec(
        subject=subject_spec_from_config(cfg),
        target_class=int(sect["target_class"]),
        grid=grid,
        repetitions=int(sect.get("repetitions", 10)),
        master_seed=int(sect.get("master_seed", 0) if master_seed is None else master_seed),
        repair_layer=int(search.get("layer", -1)),
        n_iterations=int(search.get("n_iterations", 100)),
        inertia=float(search.get("inertia", 0.7298)),
        cognitive=float(search.get("cognitive", 1.49618)),
        social=float(search.get("social", 1.49618)),
        velocity_clamp=float(search.get("velocity_clamp", 3.0)),
        beta=float(search.get("beta", 0.25)),
        delta=float(search.get("delta", 1e-6)),
        orientation=str(search.get("orientation", "prose")),
    )
