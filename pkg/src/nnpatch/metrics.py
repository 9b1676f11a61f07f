"""Evaluation reports, before/after diffs, and regression checks at the
overall-accuracy and instance level."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, predictions
from .network import Batch, Model


@dataclass(frozen=True)
class EvalReport:
    """Per-sample verdicts for one model on one dataset."""

    sample_ids: tuple[str, ...]
    labels: tuple[int, ...]
    predicted: tuple[int, ...]
    degenerate: bool = False

    def __post_init__(self) -> None:
        if not (len(self.sample_ids) == len(self.labels) == len(self.predicted)):
            raise ValueError("ids, labels and predictions must align")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("sample_ids must be unique")

    def __len__(self) -> int:
        return len(self.sample_ids)

    def passed(self, idx: int) -> bool:
        return self.labels[idx] == self.predicted[idx]

    @property
    def verdicts(self) -> dict[str, bool]:
        return {
            sid: l == p for sid, l, p in zip(self.sample_ids, self.labels, self.predicted)
        }

    @property
    def overall_accuracy(self) -> float:
        if len(self) == 0:
            return 1.0  # degenerate: no sample failed
        return sum(l == p for l, p in zip(self.labels, self.predicted)) / len(self)

    @property
    def per_class_accuracy(self) -> dict[int, float]:
        """Accuracy per true class, for classes present in the data."""
        totals: dict[int, int] = {}
        hits: dict[int, int] = {}
        for l, p in zip(self.labels, self.predicted):
            totals[l] = totals.get(l, 0) + 1
            hits[l] = hits.get(l, 0) + (l == p)
        return {c: hits[c] / totals[c] for c in sorted(totals)}

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": {str(c): a for c, a in self.per_class_accuracy.items()},
            "degenerate": self.degenerate,
            "verdicts": {
                sid: {"label": l, "predicted": p, "passed": l == p}
                for sid, l, p in zip(self.sample_ids, self.labels, self.predicted)
            },
        }


@dataclass(frozen=True)
class RepairDiff:
    """Verdict changes between two reports over the same samples."""

    broken: frozenset[str]
    repaired: frozenset[str]
    unchanged_pass: int
    unchanged_fail: int

    def __post_init__(self) -> None:
        if self.broken & self.repaired:
            raise ValueError("a sample cannot be both broken and repaired")

    @property
    def total(self) -> int:
        return len(self.broken) + len(self.repaired) + self.unchanged_pass + self.unchanged_fail


def evaluate(model: Model, data) -> EvalReport:
    """Verdicts for a Dataset or Batch; argmax ties go to the lowest class."""
    batch = data.as_batch() if isinstance(data, Dataset) else data
    if not isinstance(batch, Batch):
        raise TypeError("expected a Dataset or Batch")
    pred = predictions(model, batch)
    return EvalReport(
        batch.sample_ids,
        tuple(int(l) for l in batch.labels),
        tuple(int(p) for p in pred),
        degenerate=len(batch) == 0,
    )


def diff(before: EvalReport, after: EvalReport) -> RepairDiff:
    """Exact verdict diff. Reports must cover the same sample ids."""
    if set(before.sample_ids) != set(after.sample_ids):
        missing = sorted(set(before.sample_ids) ^ set(after.sample_ids))
        raise ValueError(f"reports cover different samples: {missing}")
    b = before.verdicts
    a = after.verdicts
    broken = frozenset(sid for sid in b if b[sid] and not a[sid])
    repaired = frozenset(sid for sid in b if not b[sid] and a[sid])
    unchanged_pass = sum(1 for sid in b if b[sid] and a[sid])
    unchanged_fail = sum(1 for sid in b if not b[sid] and not a[sid])
    return RepairDiff(broken, repaired, unchanged_pass, unchanged_fail)


@dataclass(frozen=True)
class RegressionCheck:
    """Outcome of a suppression check, with the evidence behind it."""

    ok: bool
    level: str
    scope: str
    evidence: dict


def _scope_ids(report: EvalReport, scope) -> set[str]:
    if scope == "all":
        return set(report.sample_ids)
    c = int(scope)
    return {sid for sid, l in zip(report.sample_ids, report.labels) if l == c}


def _scoped_accuracy(report: EvalReport, ids: set[str]) -> float:
    rows = [(l, p) for sid, l, p in zip(report.sample_ids, report.labels, report.predicted) if sid in ids]
    if not rows:
        return 1.0
    return sum(l == p for l, p in rows) / len(rows)


def check_regression(before: EvalReport, after: EvalReport, level: str, scope="all") -> RegressionCheck:
    """Suppression check.

    level "overall": accuracy within scope did not drop. level "instance":
    no individual in-scope sample flipped from pass to fail.
    """
    if level not in ("overall", "instance"):
        raise ValueError(f"unknown level {level!r}")
    ids = _scope_ids(before, scope)
    scope_name = "all" if scope == "all" else f"class {int(scope)}"
    if level == "overall":
        acc_before = _scoped_accuracy(before, ids)
        acc_after = _scoped_accuracy(after, ids)
        return RegressionCheck(
            ok=acc_after >= acc_before,
            level=level,
            scope=scope_name,
            evidence={"before_accuracy": acc_before, "after_accuracy": acc_after},
        )
    d = diff(before, after)
    violating = sorted(d.broken & ids)
    return RegressionCheck(
        ok=not violating,
        level=level,
        scope=scope_name,
        evidence={"broken_ids": violating},
    )
