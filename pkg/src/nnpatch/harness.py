"""End-to-end pipeline and the averaged sweep protocol.

A sweep trains one subject, then runs every grid config for a fixed number
of repetitions. Each run gets its own directory and RNG streams derived
from (master_seed, config index, repetition index); a present run.json
marks a completed run, which is what makes sweeps resumable. Wall-clock
runtimes live in timing.json sidecars so everything else is byte-stable.
"""
from __future__ import annotations

import concurrent.futures
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    SPLIT_NAMES,
    NothingToRepairError,
    save_model,
)
from .localization import localize_to_count, write_localized_csv
from .metrics import diff, evaluate
from .network import Model
from .repair import (
    VARIANTS,
    FitnessBreakdown,
    FitnessConfig,
    SwarmConfig,
    repair,
    sample_positives,
    write_trace_csv,
)
from .training import SubjectSpec, materialize_splits, train_subject
from .data import DriftSpec, SplitSpec, select_repair_inputs


@dataclass(frozen=True)
class GridEntry:
    """One hyperparameter combination of the sweep grid."""

    variant: str
    alpha: float
    pi: bool
    target_lw: int
    n_pos: int
    n_particles: int

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.target_lw < 1 or self.n_pos < 1:
            raise ValueError("target_lw and n_pos must be >= 1")
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "alpha": self.alpha,
            "pi": self.pi,
            "target_lw": self.target_lw,
            "n_pos": self.n_pos,
            "n_particles": self.n_particles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridEntry":
        return cls(
            variant=str(d["variant"]),
            alpha=float(d["alpha"]),
            pi=bool(d["pi"]),
            target_lw=int(d["target_lw"]),
            n_pos=int(d["n_pos"]),
            n_particles=int(d["n_particles"]),
        )


@dataclass(frozen=True)
class ExperimentSpec:
    """A subject plus the grid and seeds of a full sweep."""

    subject: SubjectSpec
    target_class: int
    grid: tuple[GridEntry, ...]
    repetitions: int = 10
    master_seed: int = 0
    repair_layer: int = -1
    n_iterations: int = 100
    inertia: float = 0.7298
    cognitive: float = 1.49618
    social: float = 1.49618
    velocity_clamp: float = 3.0
    beta: float = 0.25
    delta: float = 1e-6
    orientation: str = "prose"

    def __post_init__(self) -> None:
        grid = tuple(
            e if isinstance(e, GridEntry) else GridEntry.from_dict(e) for e in self.grid
        )
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ValueError("grid must not be empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class RunResult:
    """One (config, repetition) outcome. runtime is kept out of to_dict so
    persisted records stay byte-identical across reruns."""

    config_id: str
    config: dict
    rep: int
    pos_seed: int
    swarm_seed: int
    status: str  # ok | no_op | error
    error: str | None = None
    note: str | None = None
    n_neg: int = 0
    n_pos: int = 0
    n_localized: int = 0
    localization_warning: str | None = None
    identity_fallback: bool = False
    no_search_space: bool = False
    best: dict | None = None
    splits: dict = field(default_factory=dict)
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "config": self.config,
            "rep": self.rep,
            "pos_seed": self.pos_seed,
            "swarm_seed": self.swarm_seed,
            "status": self.status,
            "error": self.error,
            "note": self.note,
            "n_neg": self.n_neg,
            "n_pos": self.n_pos,
            "n_localized": self.n_localized,
            "localization_warning": self.localization_warning,
            "identity_fallback": self.identity_fallback,
            "no_search_space": self.no_search_space,
            "best": self.best,
            "splits": self.splits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(**{k: d[k] for k in d if k != "runtime"})


@dataclass(frozen=True)
class AggregateResult:
    """Per-config means and the per-config minimum-regression run."""

    configs: tuple[dict, ...]
    runs: tuple[RunResult, ...]

    def to_dict(self) -> dict:
        return {
            "configs": list(self.configs),
            "runs": [r.to_dict() for r in self.runs],
        }


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def _read_json(path) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def derive_run_seeds(master_seed: int, config_idx: int, rep_idx: int) -> tuple[int, int]:
    """(pos_seed, swarm_seed) from non-overlapping spawned streams."""
    root = np.random.SeedSequence(master_seed, spawn_key=(config_idx, rep_idx))
    pos_ss, swarm_ss = root.spawn(2)
    return (
        int(pos_ss.generate_state(1, np.uint64)[0]),
        int(swarm_ss.generate_state(1, np.uint64)[0]),
    )


def _breakdown_dict(b: FitnessBreakdown) -> dict:
    return {
        "n_patched": b.n_patched,
        "n_intact": b.n_intact,
        "loss_neg_before": b.loss_neg_before,
        "loss_neg_after": b.loss_neg_after,
        "loss_pos_before": b.loss_pos_before,
        "loss_pos_after": b.loss_pos_after,
        "raw_fitness": b.raw_fitness,
        "gated_fitness": b.gated_fitness,
    }


def _config_hash(entry: GridEntry) -> str:
    blob = json.dumps(entry.to_dict(), sort_keys=True).encode("ascii")
    return hashlib.sha256(blob).hexdigest()[:16]


def _split_records(before: dict, after: dict) -> dict:
    out = {}
    for name in SPLIT_NAMES:
        d = diff(before[name], after[name])
        out[name] = {
            "n": len(before[name]),
            "before_accuracy": before[name].overall_accuracy,
            "after_accuracy": after[name].overall_accuracy,
            "broken": len(d.broken),
            "repaired": len(d.repaired),
            "broken_ids": sorted(d.broken),
            "repaired_ids": sorted(d.repaired),
        }
    return out


def run_repair_pipeline(
    model: Model,
    splits,
    entry: GridEntry,
    exp: ExperimentSpec,
    config_idx: int,
    rep_idx: int,
    out_dir: Path | None = None,
) -> RunResult:
    """Select inputs, localize, repair, evaluate all four splits, persist.

    A subject with no failures on the target class yields a recorded no-op
    run rather than an error.
    """
    t0 = time.perf_counter()
    config_id = f"cfg{config_idx:03d}"
    pos_seed, swarm_seed = derive_run_seeds(exp.master_seed, config_idx, rep_idx)
    layer = exp.repair_layer % model.n_layers
    before = {name: evaluate(model, ds) for name, ds in zip(SPLIT_NAMES, splits)}

    result = RunResult(
        config_id=config_id,
        config=entry.to_dict(),
        rep=rep_idx,
        pos_seed=pos_seed,
        swarm_seed=swarm_seed,
        status="ok",
    )

    try:
        inputs = select_repair_inputs(model, splits[0], splits[2], exp.target_class)
    except NothingToRepairError as exc:
        result.status = "no_op"
        result.note = str(exc)
        result.identity_fallback = True
        result.splits = _split_records(before, before)
        result.runtime = time.perf_counter() - t0
        if out_dir is not None:
            _persist_run(result, None, None, out_dir)
        return result

    localized = localize_to_count(
        model, inputs.negative_set, inputs.positive_pool, layer, entry.target_lw
    )
    i_pos = sample_positives(inputs.positive_pool, entry.n_pos, pos_seed)
    fcfg = FitnessConfig(
        variant=entry.variant,
        alpha=entry.alpha,
        beta=exp.beta,
        delta=exp.delta,
        perfect_intact=entry.pi,
        loss_ratio_orientation=exp.orientation,
    )
    scfg = SwarmConfig(
        n_particles=entry.n_particles,
        n_iterations=exp.n_iterations,
        inertia=exp.inertia,
        cognitive=exp.cognitive,
        social=exp.social,
        velocity_clamp=exp.velocity_clamp,
        seed=swarm_seed,
    )
    rr = repair(model, localized, inputs.negative_set, i_pos, fcfg, scfg)
    after = {name: evaluate(rr.model, ds) for name, ds in zip(SPLIT_NAMES, splits)}

    result.n_neg = len(inputs.negative_set)
    result.n_pos = len(i_pos)
    result.n_localized = len(localized)
    result.localization_warning = localized.warning
    result.identity_fallback = rr.identity_fallback
    result.no_search_space = rr.no_search_space
    result.best = _breakdown_dict(rr.best)
    result.splits = _split_records(before, after)
    result.runtime = time.perf_counter() - t0
    if out_dir is not None:
        _persist_run(result, rr, localized, out_dir)
    return result


def _persist_run(result: RunResult, rr, localized, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if rr is not None:
        entry = GridEntry.from_dict(result.config)
        save_model(
            rr.model,
            out_dir / "model.json",
            provenance={"seed": result.swarm_seed, "config_hash": _config_hash(entry)},
        )
        write_trace_csv(rr.trace, out_dir / "trace.csv")
    if localized is not None:
        write_localized_csv(localized, out_dir / "localized.csv")
    _write_json(result.to_dict(), out_dir / "run.json")  # written last: completion marker
    _write_json({"runtime_seconds": result.runtime}, out_dir / "timing.json")


def _load_run(run_dir: Path) -> RunResult:
    result = RunResult.from_dict(_read_json(run_dir / "run.json"))
    timing = run_dir / "timing.json"
    if timing.exists():
        result.runtime = float(_read_json(timing).get("runtime_seconds", 0.0))
    return result


def _spec_dict(exp: ExperimentSpec) -> dict:
    subj = exp.subject
    return {
        "subject": {
            "layer_sizes": list(subj.layer_sizes),
            "epochs": subj.epochs,
            "learning_rate": subj.learning_rate,
            "batch_size": subj.batch_size,
            "seed": subj.seed,
            "source": subj.source,
            "split": {
                "train": subj.split.train,
                "validation": subj.split.validation,
                "repair": subj.split.repair,
                "test": subj.split.test,
                "seed": subj.split.seed,
                "stratified": subj.split.stratified,
            },
            "drift": None
            if subj.drift is None
            else {
                "target_class": subj.drift.target_class,
                "train_fraction_of_class": subj.drift.train_fraction_of_class,
                "repair_fraction_of_class": subj.drift.repair_fraction_of_class,
                "seed": subj.drift.seed,
            },
        },
        "target_class": exp.target_class,
        "grid": [e.to_dict() for e in exp.grid],
        "repetitions": exp.repetitions,
        "master_seed": exp.master_seed,
        "repair_layer": exp.repair_layer,
        "n_iterations": exp.n_iterations,
        "inertia": exp.inertia,
        "cognitive": exp.cognitive,
        "social": exp.social,
        "velocity_clamp": exp.velocity_clamp,
        "beta": exp.beta,
        "delta": exp.delta,
        "orientation": exp.orientation,
    }


def spec_from_dict(d: dict) -> ExperimentSpec:
    s = d["subject"]
    split_spec = SplitSpec(**s["split"])
    drift = None if s.get("drift") is None else DriftSpec(**s["drift"])
    subject = SubjectSpec(
        layer_sizes=tuple(s["layer_sizes"]),
        epochs=int(s["epochs"]),
        learning_rate=float(s["learning_rate"]),
        batch_size=int(s["batch_size"]),
        seed=int(s["seed"]),
        source=dict(s["source"]),
        split=split_spec,
        drift=drift,
    )
    return ExperimentSpec(
        subject=subject,
        target_class=int(d["target_class"]),
        grid=tuple(GridEntry.from_dict(e) for e in d["grid"]),
        repetitions=int(d["repetitions"]),
        master_seed=int(d["master_seed"]),
        repair_layer=int(d["repair_layer"]),
        n_iterations=int(d["n_iterations"]),
        inertia=float(d["inertia"]),
        cognitive=float(d["cognitive"]),
        social=float(d["social"]),
        velocity_clamp=float(d["velocity_clamp"]),
        beta=float(d["beta"]),
        delta=float(d["delta"]),
        orientation=str(d["orientation"]),
    )


def aggregate_runs(exp: ExperimentSpec, runs) -> AggregateResult:
    """Per-config means over non-error runs, plus the run with the fewest
    test-split breaks per config (ties go to the lower repetition index)."""
    runs = tuple(runs)
    configs = []
    for ci, entry in enumerate(exp.grid):
        config_id = f"cfg{ci:03d}"
        config_runs = sorted(
            (r for r in runs if r.config_id == config_id), key=lambda r: r.rep
        )
        usable = [r for r in config_runs if r.status != "error"]
        means: dict = {}
        if usable:
            for name in SPLIT_NAMES:
                means[name] = {
                    key: float(np.mean([r.splits[name][key] for r in usable]))
                    for key in ("broken", "repaired", "before_accuracy", "after_accuracy")
                }
        if usable:
            min_run = min(usable, key=lambda r: (r.splits["test"]["broken"], r.rep))
            min_rep = min_run.rep
            min_broken = min_run.splits["test"]["broken"]
        else:
            min_rep = None
            min_broken = None
        configs.append(
            {
                "config_id": config_id,
                "config": entry.to_dict(),
                "n_runs": len(config_runs),
                "n_usable": len(usable),
                "statuses": [r.status for r in config_runs],
                "means": means,
                "min_regression_rep": min_rep,
                "min_regression_test_broken": min_broken,
            }
        )
    return AggregateResult(tuple(configs), runs)


def run_sweep(exp: ExperimentSpec, out_dir, n_workers: int = 1) -> AggregateResult:
    """Train the subject once, run grid x repetitions, aggregate.

    Completed runs (run.json present) are reused. Failures are isolated:
    they become status="error" records and the sweep continues. Results are
    identical at any worker count because every run owns its directory and
    its RNG streams.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(_spec_dict(exp), out / "sweep.json")

    _, splits = materialize_splits(exp.subject)
    subject_dir = out / "subject"
    subject_dir.mkdir(exist_ok=True)
    model = train_subject(exp.subject, splits)
    save_model(model, subject_dir / "model.json")
    _write_json(
        {
            "split_sizes": {name: len(ds) for name, ds in zip(SPLIT_NAMES, splits)},
            "split_accuracies": {
                name: evaluate(model, ds).overall_accuracy
                for name, ds in zip(SPLIT_NAMES, splits)
            },
            "target_class": exp.target_class,
        },
        subject_dir / "subject.json",
    )

    def job(ci: int, ri: int) -> RunResult:
        run_dir = out / "runs" / f"cfg{ci:03d}" / f"rep{ri:02d}"
        if (run_dir / "run.json").exists():
            return _load_run(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            run_repair_pipeline(model, splits, exp.grid[ci], exp, ci, ri, out_dir=run_dir)
        except Exception as exc:  # isolate-and-continue
            pos_seed, swarm_seed = derive_run_seeds(exp.master_seed, ci, ri)
            failed = RunResult(
                config_id=f"cfg{ci:03d}",
                config=exp.grid[ci].to_dict(),
                rep=ri,
                pos_seed=pos_seed,
                swarm_seed=swarm_seed,
                status="error",
                error=f"{type(exc).__name__}: {exc}",
            )
            _write_json(failed.to_dict(), run_dir / "run.json")
            _write_json({"runtime_seconds": 0.0}, run_dir / "timing.json")
        # reload from disk so resumed and fresh sweeps aggregate identical bytes
        return _load_run(run_dir)

    jobs = [(ci, ri) for ci in range(len(exp.grid)) for ri in range(exp.repetitions)]
    if n_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(job, ci, ri) for ci, ri in jobs]
            results = [f.result() for f in futures]
    else:
        results = [job(ci, ri) for ci, ri in jobs]

    agg = aggregate_runs(exp, results)
    _write_json(agg.to_dict(), out / "aggregate.json")
    return agg


def load_sweep_dir(out_dir) -> tuple[ExperimentSpec, AggregateResult]:
    """Rebuild the aggregate from persisted run records."""
    out = Path(out_dir)
    exp = spec_from_dict(_read_json(out / "sweep.json"))
    runs = []
    for ci in range(len(exp.grid)):
        for ri in range(exp.repetitions):
            run_json = out / "runs" / f"cfg{ci:03d}" / f"rep{ri:02d}" / "run.json"
            if run_json.exists():
                runs.append(_load_run(run_json.parent))
    return exp, aggregate_runs(exp, runs)


def _csv_lines(header: str, rows) -> str:
    return "\n".join([header] + rows) + "\n"


def emit_report(agg: AggregateResult, out_dir) -> list[Path]:
    """Report files: JSON summary, per-config means, min-regression
    accuracies, and a long-format per-run table. Headers are emitted even
    when there is nothing to report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    _write_json(agg.to_dict(), path)
    written.append(path)

    rows = []
    for r in agg.runs:
        if r.status == "error":
            continue
        for name in SPLIT_NAMES:
            s = r.splits[name]
            rows.append(
                ",".join(
                    [
                        r.config_id,
                        str(r.rep),
                        r.status,
                        name,
                        str(s["n"]),
                        repr(s["before_accuracy"]),
                        repr(s["after_accuracy"]),
                        str(s["broken"]),
                        str(s["repaired"]),
                    ]
                )
            )
    path = out / "runs_long.csv"
    header = "config_id,rep,status,split,n,before_accuracy,after_accuracy,broken,repaired"
    path.write_text(_csv_lines(header, rows), encoding="ascii")
    written.append(path)

    rows = []
    for cfg in agg.configs:
        c = cfg["config"]
        for name in SPLIT_NAMES:
            if name not in cfg["means"]:
                continue
            m = cfg["means"][name]
            rows.append(
                ",".join(
                    [
                        cfg["config_id"],
                        c["variant"],
                        repr(c["alpha"]),
                        str(c["pi"]).lower(),
                        str(c["target_lw"]),
                        str(c["n_pos"]),
                        str(c["n_particles"]),
                        str(cfg["n_usable"]),
                        name,
                        repr(m["broken"]),
                        repr(m["repaired"]),
                        repr(m["before_accuracy"]),
                        repr(m["after_accuracy"]),
                    ]
                )
            )
    path = out / "config_summary.csv"
    header = (
        "config_id,variant,alpha,pi,target_lw,n_pos,n_particles,n_usable,split,"
        "mean_broken,mean_repaired,mean_before_accuracy,mean_after_accuracy"
    )
    path.write_text(_csv_lines(header, rows), encoding="ascii")
    written.append(path)

    by_key = {(r.config_id, r.rep): r for r in agg.runs}
    rows = []
    for cfg in agg.configs:
        rep = cfg["min_regression_rep"]
        if rep is None:
            continue
        r = by_key[(cfg["config_id"], rep)]
        for name in SPLIT_NAMES:
            s = r.splits[name]
            rows.append(
                ",".join(
                    [
                        cfg["config_id"],
                        str(rep),
                        name,
                        repr(s["before_accuracy"]),
                        repr(s["after_accuracy"]),
                        str(s["broken"]),
                        str(s["repaired"]),
                    ]
                )
            )
    path = out / "min_regression.csv"
    header = "config_id,rep,split,before_accuracy,after_accuracy,broken,repaired"
    path.write_text(_csv_lines(header, rows), encoding="ascii")
    written.append(path)

    return written
