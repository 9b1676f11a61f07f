"""Weight-level fault localization.

Per weight we take four impact scores: gradient magnitude and forward
contribution, each over the failed and the passed data. The suspicious set
keeps weights that rank high on both failed impacts and drops those that
also rank high on both passed impacts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import Batch, Model, WeightRef, layer_inputs, weight_gradient_matrix

IMPACT_NAMES = ("back_failed", "fwd_failed", "back_passed", "fwd_passed")


@dataclass(frozen=True)
class ImpactTable:
    """Four scores for every weight of one layer, as (n_in, n_out) arrays."""

    layer: int
    back_failed: np.ndarray
    fwd_failed: np.ndarray
    back_passed: np.ndarray
    fwd_passed: np.ndarray

    def __post_init__(self) -> None:
        arrays = {}
        shape = None
        for name in IMPACT_NAMES:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be 2-D (n_in, n_out)")
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError("impact arrays must share one shape")
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise ValueError(f"{name} must be finite and non-negative")
            arrays[name] = arr
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.back_failed.shape

    @property
    def n_weights(self) -> int:
        n_in, n_out = self.shape
        return n_in * n_out

    def refs(self) -> list[WeightRef]:
        """Every weight of the layer, in WeightRef total order."""
        n_in, n_out = self.shape
        return [WeightRef(self.layer, i, j) for j in range(n_out) for i in range(n_in)]

    def score(self, name: str, ref: WeightRef) -> float:
        return float(getattr(self, name)[ref.i, ref.j])


@dataclass(frozen=True)
class LocalizedSet:
    """Ordered suspicious weights plus how they were selected."""

    refs: tuple[WeightRef, ...]
    provenance: dict
    warning: str | None = None

    def __post_init__(self) -> None:
        refs = tuple(self.refs)
        object.__setattr__(self, "refs", refs)
        if len(set(refs)) != len(refs):
            raise ValueError("localized set must not contain duplicates")

    def __len__(self) -> int:
        return len(self.refs)


def compute_impacts(model: Model, failed: Batch, passed: Batch, layer: int) -> ImpactTable:
    """Score every weight of `layer` on both data subsets.

    back_X[i,j] = |d(mean loss over X)/dw_ij|; fwd_X[i,j] = mean over X of
    |o_i * w_ij| where o is the input feeding the layer.
    """
    if len(failed) == 0 or len(passed) == 0:
        raise ValueError("impact computation needs non-empty failed and passed batches")
    w = model.weights[layer]

    def _fwd(batch: Batch) -> np.ndarray:
        o = layer_inputs(model, batch, layer)
        return np.abs(o).mean(axis=0)[:, None] * np.abs(w)

    return ImpactTable(
        layer=layer,
        back_failed=np.abs(weight_gradient_matrix(model, failed, layer)),
        fwd_failed=_fwd(failed),
        back_passed=np.abs(weight_gradient_matrix(model, passed, layer)),
        fwd_passed=_fwd(passed),
    )


def _ranked_flat(table: ImpactTable, name: str) -> np.ndarray:
    """Flat weight indices sorted by (impact desc, j asc, i asc)."""
    arr = getattr(table, name)
    n_in, n_out = table.shape
    flat = arr.ravel()  # C order: index = i*n_out + j
    i_idx, j_idx = np.divmod(np.arange(flat.size), n_out)
    # lexsort uses the last key as primary
    return np.lexsort((i_idx, j_idx, -flat))


def _flat_to_ref(table: ImpactTable, flat: int) -> WeightRef:
    n_out = table.shape[1]
    return WeightRef(table.layer, flat // n_out, flat % n_out)


def top_sets(table: ImpactTable, n_g: int):
    """Top-n_g weight sets for each of the four impacts.

    Ties at the cut are broken by WeightRef total order, so the sets are
    deterministic.
    """
    if not 1 <= n_g <= table.n_weights:
        raise ValueError(f"n_g must lie in [1, {table.n_weights}], got {n_g}")
    out = []
    for name in IMPACT_NAMES:
        order = _ranked_flat(table, name)
        out.append(frozenset(_flat_to_ref(table, int(f)) for f in order[:n_g]))
    return tuple(out)


def _suspiciousness_order(table: ImpactTable):
    """Sort key per flat index: a weight is as suspicious as the weaker of
    its two failed-impact ranks (it must be high on both to be localized)."""
    n = table.n_weights
    pos = {}
    for name in ("back_failed", "fwd_failed"):
        p = np.empty(n, dtype=np.int64)
        p[_ranked_flat(table, name)] = np.arange(n)
        pos[name] = p
    binding = np.maximum(pos["back_failed"], pos["fwd_failed"])

    def key(ref: WeightRef):
        flat = ref.i * table.shape[1] + ref.j
        return (int(binding[flat]),) + ref.sort_key

    return key


def localize(table: ImpactTable, n_g: int) -> LocalizedSet:
    """Suspicious set at one n_g: weights in the top-n_g of BOTH failed
    impacts, minus those in the top-n_g of BOTH passed impacts."""
    b_f, f_f, b_p, f_p = top_sets(table, n_g)
    chosen = (b_f & f_f) - (b_p & f_p)
    refs = tuple(sorted(chosen, key=_suspiciousness_order(table)))
    provenance = {
        "n_g": n_g,
        "b_failed": len(b_f),
        "f_failed": len(f_f),
        "b_passed": len(b_p),
        "f_passed": len(f_p),
    }
    warning = "localized set is empty" if not refs else None
    return LocalizedSet(refs, provenance, warning)


def localize_to_count(
    model: Model, failed: Batch, passed: Batch, layer: int, target_lw: int
) -> LocalizedSet:
    """Pick n_g so the suspicious set reaches target_lw weights, then truncate.

    |localize(n_g)| is not monotone in n_g (the passed-side subtraction can
    shrink it), so the doubling/bisection scan verifies its answer by direct
    evaluation and falls back to a full scan when the target is never hit.
    """
    if target_lw < 1:
        raise ValueError("target_lw must be >= 1")
    table = compute_impacts(model, failed, passed, layer)
    max_ng = table.n_weights
    cache: dict[int, LocalizedSet] = {}

    def at(n: int) -> LocalizedSet:
        if n not in cache:
            cache[n] = localize(table, n)
        return cache[n]

    hi = 1
    while len(at(hi)) < target_lw and hi < max_ng:
        hi = min(hi * 2, max_ng)

    if len(at(hi)) < target_lw:
        # doubling never hit the target; fall back to a full scan
        reaching = [n for n in range(1, max_ng + 1) if len(at(n)) >= target_lw]
        if not reaching:
            best_n = max(range(1, max_ng + 1), key=lambda n: (len(at(n)), -n))
            best = at(best_n)
            return LocalizedSet(
                best.refs,
                best.provenance,
                f"target_lw={target_lw} unreachable; best |W_localized| is {len(best)} at n_g={best_n}",
            )
        result = at(min(reaching))
        return LocalizedSet(result.refs[:target_lw], result.provenance, result.warning)

    lo = hi // 2
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if len(at(mid)) >= target_lw:
            hi = mid
        else:
            lo = mid
    result = at(hi)  # direct evaluation at the returned n_g
    return LocalizedSet(result.refs[:target_lw], result.provenance, result.warning)


def write_impact_csv(table: ImpactTable, path) -> None:
    """Inspection dump: one row per weight with the four scores."""
    lines = ["layer,i,j," + ",".join(IMPACT_NAMES)]
    for ref in table.refs():
        scores = ",".join(repr(table.score(name, ref)) for name in IMPACT_NAMES)
        lines.append(f"{ref.layer},{ref.i},{ref.j},{scores}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def write_localized_csv(localized: LocalizedSet, path) -> None:
    lines = ["rank,layer,i,j"]
    for rank, ref in enumerate(localized.refs):
        lines.append(f"{rank},{ref.layer},{ref.i},{ref.j}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
