"""Impact computation and suspicious-weight selection, checked against
independent brute-force oracles."""
from __future__ import annotations

import numpy as np
import pytest

from nnpatch import (
    Batch,
    ImpactTable,
    WeightRef,
    build_mlp,
    compute_impacts,
    localize,
    localize_to_count,
    top_sets,
)
from nnpatch.localization import write_impact_csv, write_localized_csv
from nnpatch.network import forward, loss, write_weights

from helpers import random_batch, random_model


def random_table(rng, n_in=None, n_out=None, ties=False):
    n_in = n_in or int(rng.integers(1, 15))
    n_out = n_out or int(rng.integers(1, 15))
    if ties:
        pool = rng.integers(0, 4, size=(4, n_in, n_out)).astype(float)
    else:
        pool = rng.random((4, n_in, n_out))
    return ImpactTable(
        layer=0,
        back_failed=pool[0],
        fwd_failed=pool[1],
        back_passed=pool[2],
        fwd_passed=pool[3],
    )


def brute_top(table, name, n_g):
    """Reference top-n selection: full sort by (impact desc, ref order)."""
    score = getattr(table, name)
    refs = [WeightRef(table.layer, i, j) for i in range(score.shape[0]) for j in range(score.shape[1])]
    refs.sort(key=lambda r: (-score[r.i, r.j],) + r.sort_key)
    return frozenset(refs[:n_g])


def brute_localized(table, n_g):
    bf = brute_top(table, "back_failed", n_g)
    ff = brute_top(table, "fwd_failed", n_g)
    bp = brute_top(table, "back_passed", n_g)
    fp = brute_top(table, "fwd_passed", n_g)
    return (bf & ff) - (bp & fp)


def test_impact_table_validation():
    with pytest.raises(ValueError):
        ImpactTable(0, np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError, match="negative"):
        ImpactTable(0, -np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        ImpactTable(0, np.full((2, 2), np.nan), np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)))


def test_zero_weight_has_zero_forward_impact():
    m = build_mlp([2, 3, 2], seed=1)
    w = [x.copy() for x in (m.weights[1],)][0]
    w[1, 0] = 0.0
    m = write_weights(m, [WeightRef(1, 1, 0)], [0.0])
    rng = np.random.default_rng(2)
    failed = random_batch(rng, m, prefix="f")
    passed = random_batch(rng, m, prefix="p")
    t = compute_impacts(m, failed, passed, layer=1)
    assert t.fwd_failed[1, 0] == 0.0
    assert t.fwd_passed[1, 0] == 0.0


def test_same_batch_gives_equal_columns():
    rng = np.random.default_rng(3)
    m = random_model(rng)
    b = random_batch(rng, m)
    t = compute_impacts(m, b, b, layer=m.n_layers - 1)
    np.testing.assert_array_equal(t.back_failed, t.back_passed)
    np.testing.assert_array_equal(t.fwd_failed, t.fwd_passed)


def test_swapping_batches_swaps_columns():
    rng = np.random.default_rng(4)
    m = random_model(rng)
    f = random_batch(rng, m, prefix="f")
    p = random_batch(rng, m, prefix="p")
    layer = m.n_layers - 1
    t = compute_impacts(m, f, p, layer)
    s = compute_impacts(m, p, f, layer)
    np.testing.assert_array_equal(t.back_failed, s.back_passed)
    np.testing.assert_array_equal(t.fwd_failed, s.fwd_passed)
    np.testing.assert_array_equal(t.back_passed, s.back_failed)
    np.testing.assert_array_equal(t.fwd_passed, s.fwd_failed)


def test_impacts_match_per_sample_loop_oracle():
    # explicit per-sample loops, no shared code with compute_impacts
    m = build_mlp([2, 3, 2], seed=6)
    rng = np.random.default_rng(7)
    failed = Batch(rng.normal(size=(4, 2)), rng.integers(0, 2, 4), ("f0", "f1", "f2", "f3"))
    passed = Batch(rng.normal(size=(3, 2)), rng.integers(0, 2, 3), ("p0", "p1", "p2"))
    layer = 1
    t = compute_impacts(m, failed, passed, layer)

    def fd_grad_mean(batch, i, j, eps=1e-7):
        ref = WeightRef(layer, i, j)
        w0 = float(m.weights[layer][i, j])
        up = loss(write_weights(m, [ref], [w0 + eps]), batch)
        dn = loss(write_weights(m, [ref], [w0 - eps]), batch)
        return (up - dn) / (2 * eps)

    n_in, n_out = m.weights[layer].shape
    for batch, back, fwd in ((failed, t.back_failed, t.fwd_failed), (passed, t.back_passed, t.fwd_passed)):
        for i in range(n_in):
            for j in range(n_out):
                assert abs(back[i, j] - abs(fd_grad_mean(batch, i, j))) <= 1e-6
                acc = 0.0
                for s in range(len(batch)):
                    x = batch.inputs[s]
                    h = np.maximum(x @ m.weights[0] + m.biases[0], 0.0)
                    acc += abs(h[i] * m.weights[layer][i, j])
                assert abs(fwd[i, j] - acc / len(batch)) <= 1e-8


def test_compute_impacts_rejects_empty_batches():
    m = build_mlp([2, 2], seed=0)
    empty = Batch(np.zeros((0, 2)), np.zeros(0, dtype=int), ())
    b = Batch(np.zeros((1, 2)), [0], ("a",))
    with pytest.raises(ValueError):
        compute_impacts(m, empty, b, 0)
    with pytest.raises(ValueError):
        compute_impacts(m, b, empty, 0)


def test_top_sets_saturation_and_exact_sort():
    rng = np.random.default_rng(8)
    t = random_table(rng, 4, 5)
    full = top_sets(t, 20)
    all_refs = frozenset(WeightRef(0, i, j) for i in range(4) for j in range(5))
    assert all(s == all_refs for s in full)

    sets = top_sets(t, 7)
    for name, got in zip(("back_failed", "fwd_failed", "back_passed", "fwd_passed"), sets):
        assert got == brute_top(t, name, 7)


def test_top_sets_ties_at_the_cut():
    back = np.array([[3.0, 1.0], [1.0, 1.0]])  # 3-way tie at the n_g=2 cut
    t = ImpactTable(0, back, back, back, back)
    sets = top_sets(t, 2)
    for name, got in zip(("back_failed", "fwd_failed", "back_passed", "fwd_passed"), sets):
        assert got == brute_top(t, name, 2)
    # ref order (layer, j, i): (0,1) before (1,0)? sort_key (0,j,i)
    assert sets[0] == frozenset({WeightRef(0, 0, 0), WeightRef(0, 1, 0)})


def test_top_sets_range_errors():
    rng = np.random.default_rng(9)
    t = random_table(rng, 3, 3)
    with pytest.raises(ValueError):
        top_sets(t, 0)
    with pytest.raises(ValueError):
        top_sets(t, 10)


def test_localize_trivial_cases():
    # disjoint top regions between impacts -> empty intersection
    back_f = np.array([[1.0, 0.0], [0.0, 0.0]])
    fwd_f = np.array([[0.0, 0.0], [0.0, 1.0]])
    zeros = np.zeros((2, 2))
    t = ImpactTable(0, back_f, fwd_f, zeros, zeros)
    out = localize(t, 1)
    assert out.refs == ()
    assert out.warning is not None

    # passed sets disjoint from failed sets -> plain intersection survives
    back_f = np.array([[4.0, 3.0], [0.0, 0.0]])
    fwd_f = np.array([[4.0, 3.0], [0.0, 0.0]])
    back_p = np.array([[0.0, 0.0], [4.0, 3.0]])
    fwd_p = np.array([[0.0, 0.0], [4.0, 3.0]])
    t = ImpactTable(0, back_f, fwd_f, back_p, fwd_p)
    out = localize(t, 2)
    assert set(out.refs) == {WeightRef(0, 0, 0), WeightRef(0, 0, 1)}
    assert out.warning is None


def test_localize_matches_brute_force_everywhere():
    rng = np.random.default_rng(10)
    for trial in range(40):
        t = random_table(rng, ties=bool(trial % 2))
        n = t.back_failed.size
        for n_g in range(1, n + 1):
            got = localize(t, n_g)
            assert set(got.refs) == brute_localized(t, n_g)
            assert len(got.refs) <= n_g
            assert got.provenance["n_g"] == n_g


def test_localize_set_algebra_soundness():
    rng = np.random.default_rng(11)
    t = random_table(rng, 8, 8, ties=True)
    n_g = 13
    bf, ff, bp, fp = top_sets(t, n_g)
    out = localize(t, n_g)
    for r in out.refs:
        assert r in bf and r in ff
        assert not (r in bp and r in fp)


def test_localize_determinism_including_order():
    rng = np.random.default_rng(12)
    t = random_table(rng, 9, 7, ties=True)
    a = localize(t, 11)
    b = localize(t, 11)
    assert a.refs == b.refs
    assert a.provenance == b.provenance


def test_localize_to_count_truncation_and_subset():
    # failure region must differ from the success region for a large
    # localized set to exist at any n_g
    m = build_mlp([4, 16, 8], seed=13)
    rng = np.random.default_rng(14)
    failed = Batch(rng.normal(size=(8, 4)) + 2.5, rng.integers(0, 8, 8), tuple(f"f{k}" for k in range(8)))
    passed = Batch(rng.normal(size=(9, 4)) - 1.0, rng.integers(0, 8, 9), tuple(f"p{k}" for k in range(9)))
    out = localize_to_count(m, failed, passed, layer=1, target_lw=1)
    assert len(out.refs) == 1

    out32 = localize_to_count(m, failed, passed, layer=1, target_lw=32)
    assert len(out32.refs) == 32
    n_g = out32.provenance["n_g"]
    table = compute_impacts(m, failed, passed, 1)
    assert set(out32.refs) <= set(localize(table, n_g).refs)


def test_localize_to_count_saturation_warning():
    m = build_mlp([2, 3, 2], seed=15)
    rng = np.random.default_rng(16)
    failed = Batch(rng.normal(size=(4, 2)), rng.integers(0, 2, 4), tuple(f"f{k}" for k in range(4)))
    passed = Batch(rng.normal(size=(4, 2)), rng.integers(0, 2, 4), tuple(f"p{k}" for k in range(4)))
    out = localize_to_count(m, failed, passed, layer=1, target_lw=500)
    assert out.warning is not None
    assert 0 < len(out.refs) <= 6  # layer has 3*2 weights


def test_localize_to_count_result_is_smallest_reaching_ng():
    # the chosen n_g must be minimal among those reaching target_lw
    m = build_mlp([3, 10, 3], seed=17)
    rng = np.random.default_rng(18)
    failed = Batch(rng.normal(size=(6, 3)) + 2.0, rng.integers(0, 3, 6), tuple(f"f{k}" for k in range(6)))
    passed = Batch(rng.normal(size=(7, 3)) - 1.0, rng.integers(0, 3, 7), tuple(f"p{k}" for k in range(7)))
    target = 6
    out = localize_to_count(m, failed, passed, layer=1, target_lw=target)
    assert len(out.refs) == target
    table = compute_impacts(m, failed, passed, 1)
    n_star = out.provenance["n_g"]
    assert len(localize(table, n_star).refs) >= target
    for smaller in range(1, n_star):
        assert len(localize(table, smaller).refs) < target


def test_csv_dumps(tmp_path):
    rng = np.random.default_rng(19)
    t = random_table(rng, 3, 3)
    impact_path = tmp_path / "impacts.csv"
    write_impact_csv(t, impact_path)
    lines = impact_path.read_text().strip().splitlines()
    assert lines[0] == "layer,i,j,back_failed,fwd_failed,back_passed,fwd_passed"
    assert len(lines) == 1 + 9

    out = localize(t, 4)
    loc_path = tmp_path / "localized.csv"
    write_localized_csv(out, loc_path)
    lines = loc_path.read_text().strip().splitlines()
    assert lines[0] == "rank,layer,i,j"
    assert len(lines) == 1 + len(out.refs)
