import math

import numpy as np
import pytest
import scipy.sparse as sp

from expsketch.errors import ConfigError, DimensionMismatch, ZeroDirection
from expsketch.experiments import hash_only, random_directions
from expsketch.generators import gen_matrix
from expsketch.randsource import SeedSpec
from expsketch.sketch import (GlobalParams, Mode, SketchOperator, SketchParams, apply_sketch, build_sketch,
                              distortion_report, identity_operator, target_dim, tight_example_directions)


def test_global_params():
    g = GlobalParams()
    d, n, p = 8, 1000, 3.0
    assert g.rho(d) == pytest.approx(d * math.log(d))
    assert g.iota(d, p) == pytest.approx(1 / (2 * g.rho(d) ** (1 / p)))
    assert g.iota(d, p) < 1 / d ** (1 / p)
    assert g.eta(d, n) == pytest.approx(d * math.log(d) * math.log(n))
    assert g.tau(d, n, p) == pytest.approx(g.iota(d, p) / (d * g.eta(d, n)))
    with pytest.raises(ConfigError):
        GlobalParams(c1=0)


def test_target_dim_examples():
    assert target_dim(Mode.LOW_P, 1.0, 1000, 10) == 102
    assert target_dim(Mode.HIGH_P, 3.0, 10_000, 5, practical_cap=4096) == 4096
    assert target_dim(Mode.DENSE_PSTABLE, 1.0, 1000, 16) == 256
    assert target_dim(Mode.L1, 1.0, 1000, 8) == math.ceil(8 * 8 * 9) // 9 * 9


def test_target_dim_high_formula_uncapped():
    g = GlobalParams()
    n, d, p = 100, 2, 3.0
    expect = math.ceil(6 * n ** (1 - 2 / p) * g.eta(d, n) / g.iota(d, p) ** 2 + d ** (5 + 4 * p))
    assert target_dim(Mode.HIGH_P, p, n, d) == expect


@pytest.mark.parametrize("mode,p", [(Mode.HIGH_P, 2.0), (Mode.LOW_P, 2.0), (Mode.L1, 3.0), (Mode.LOW_P, 0.0)])
def test_target_dim_rejects(mode, p):
    with pytest.raises(ConfigError):
        target_dim(mode, p, 100, 4)


@pytest.mark.parametrize("mode,p", [(Mode.HIGH_P, 3.0), (Mode.LOW_P, 1.5), (Mode.L1, 1.0)])
def test_structure_audit(mode, p):
    n, d = 1000, 10
    op = build_sketch(mode, p, n, d, SeedSpec(1), SketchParams(practical_cap=2048))
    assert op.m % op.s == 0
    S = op.to_sparse()
    assert np.all(np.diff(S.tocsc().indptr) == op.s)
    block = op.m // op.s
    for j in range(op.s):
        assert np.all(op.rows[:, j] // block == j)
    vals = hash_only(op).to_sparse().data
    assert np.allclose(np.abs(vals), 1 / math.sqrt(op.s))
    assert np.all(op.diag > 0) and np.all(np.isfinite(op.diag))


def test_mode_sparsity():
    assert build_sketch(Mode.HIGH_P, 3, 50, 4, 0, SketchParams(practical_cap=64)).s == 1
    assert build_sketch(Mode.LOW_P, 1, 50, 4, 0).s == 2
    assert build_sketch(Mode.L1, 1, 50, 8, 0).s == 9


def test_n_equals_one():
    for mode, p in [(Mode.LOW_P, 1.0), (Mode.HIGH_P, 3.0), (Mode.L1, 1.0)]:
        op = build_sketch(mode, p, 1, 4, SeedSpec(3), SketchParams(practical_cap=64))
        P = op.to_matrix()
        assert P.shape[1] == 1
        assert np.count_nonzero(P) == op.s
        assert np.allclose(np.abs(P[P != 0]), op.diag[0] / math.sqrt(op.s))


def test_build_deterministic():
    a = build_sketch(Mode.LOW_P, 1.0, 500, 6, SeedSpec(9))
    b = build_sketch(Mode.LOW_P, 1.0, 500, 6, SeedSpec(9))
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.signs, b.signs) and np.array_equal(a.diag, b.diag)
    c = build_sketch(Mode.LOW_P, 1.0, 500, 6, SeedSpec(10))
    assert not np.array_equal(a.rows, c.rows)


def test_json_round_trip():
    a = build_sketch(Mode.HIGH_P, 3.0, 300, 4, SeedSpec(2, "x"), SketchParams(practical_cap=512))
    b = SketchOperator.from_json(a.to_json())
    assert np.array_equal(a.to_matrix(), b.to_matrix())


def test_apply_single_nonzero():
    op = build_sketch(Mode.HIGH_P, 3.0, 20, 3, SeedSpec(4), SketchParams(practical_cap=32))
    M = sp.csr_matrix(([1.0], ([0], [0])), shape=(20, 3))
    out = apply_sketch(op, M)
    assert np.count_nonzero(out) == 1
    assert out[op.rows[0, 0], 0] == op.signs[0, 0] * op.diag[0]


@pytest.mark.parametrize("mode,p", [(Mode.LOW_P, 1.2), (Mode.HIGH_P, 4.0), (Mode.DENSE_PSTABLE, 1.5)])
def test_apply_matches_dense_oracle(mode, p):
    M = sp.random(100, 5, density=0.3, random_state=3, format="csr")
    op = build_sketch(mode, p, 100, 5, SeedSpec(5), SketchParams(practical_cap=128))
    assert np.allclose(apply_sketch(op, M), op.to_matrix() @ M.toarray(), rtol=1e-12, atol=1e-12)


def test_linearity():
    M = sp.random(200, 4, density=0.4, random_state=1, format="csr")
    op = build_sketch(Mode.LOW_P, 1.0, 200, 4, SeedSpec(6))
    PM = apply_sketch(op, M)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal(4)
        y = apply_sketch(op, sp.csr_matrix((M @ x)[:, None]))[:, 0]
        assert np.allclose(y, PM @ x, rtol=1e-12, atol=1e-12)


def test_partition_linearity():
    M = sp.random(300, 4, density=0.4, random_state=2, format="csr")
    op = build_sketch(Mode.LOW_P, 1.0, 300, 4, SeedSpec(7))
    parts = np.array_split(np.random.default_rng(1).permutation(300), 3)
    total = sum(apply_sketch(op, M[idx], row_ids=idx) for idx in parts)
    assert np.allclose(total, apply_sketch(op, M), atol=1e-12)


def test_apply_dimension_mismatch():
    op = build_sketch(Mode.LOW_P, 1.0, 10, 2, SeedSpec(1))
    with pytest.raises(DimensionMismatch):
        apply_sketch(op, np.ones((11, 2)))


def test_identity_operator_ratios_one():
    M = gen_matrix("gaussian", 60, 4, seed=1)
    rep = distortion_report(identity_operator(60), M, 2, 2, random_directions(4, 10, 0))
    assert np.allclose(rep["ratios"], 1.0, rtol=1e-12)


def test_zero_direction_rejected():
    M = gen_matrix("gaussian", 60, 4, seed=1)
    with pytest.raises(ZeroDirection):
        distortion_report(identity_operator(60), M, 2, 2, [np.zeros(4)])
    with pytest.raises(ZeroDirection):
        distortion_report(identity_operator(60), sp.csr_matrix((60, 4)), 2, 2)


def test_tight_example_directions():
    d = 64
    op = build_sketch(Mode.LOW_P, 1.0, 4096, d, SeedSpec(0, "tight"))
    e, x = tight_example_directions(op, d)
    inv_u = op.diag[:d]
    assert e[np.argmax(inv_u)] == 1 and e.sum() == 1
    K = np.flatnonzero(x)
    assert np.allclose(x[K], 1 / K.size)
    assert np.all((inv_u[K] >= 0.5) & (inv_u[K] <= 2))


def test_tight_example_majority():
    d = 64
    bound = d ** 1.5 / (10 * math.log2(d) ** 2)
    M = gen_matrix("tight_example", 4096, d)
    wins = 0
    for s in range(40):
        op = build_sketch(Mode.LOW_P, 1.0, 4096, d, SeedSpec(s, "tight"))
        wins += distortion_report(op, M, 1, 2, tight_example_directions(op, d))["distortion"] >= bound
    assert wins >= 20


def test_low_sandwich_gaussian_1000x8():
    d = 8
    bound = 10 * (d * math.log(d)) ** 2
    M = gen_matrix("gaussian", 1000, d, seed=3)
    ok = 0
    for s in range(10):
        op = build_sketch(Mode.LOW_P, 1.0, 1000, d, SeedSpec(s, "s8"))
        ok += distortion_report(op, M, 1, 2, random_directions(d, 200, s))["distortion"] <= bound
    assert ok >= 9


def test_dilation_and_contraction():
    d = 6
    M = gen_matrix("gaussian", 2000, d, seed=4)
    dirs = random_directions(d, 100, 1)
    C = 10
    low = build_sketch(Mode.LOW_P, 1.0, 2000, d, SeedSpec(1))
    rep = distortion_report(low, M, 1, 2, dirs)
    assert rep["max"] <= C * (d * math.log(d))
    high = build_sketch(Mode.HIGH_P, 3.0, 2000, d, SeedSpec(1), SketchParams(practical_cap=4096))
    rep = distortion_report(high, M, 3, math.inf, dirs)
    assert rep["min"] >= 1 / (C * (d * math.log(d)) ** (1 / 3))


def test_dense_pstable_sandwich():
    d, p = 6, 1.5
    M = gen_matrix("gaussian", 500, d, seed=5)
    op = build_sketch(Mode.DENSE_PSTABLE, p, 500, d, SeedSpec(2))
    rep = distortion_report(op, M, p, p, random_directions(d, 100, 2))
    assert rep["min"] >= 0.05
    assert rep["max"] <= 10 * (d * math.log(d)) ** (1 / p)


def test_ose_hash_part():
    n, d = 2000, 10
    U, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((n, d)))
    op = build_sketch(Mode.LOW_P, 1.0, n, d, SeedSpec(3, "ose"), m=8 * d * d)
    sv = np.linalg.svd(apply_sketch(hash_only(op), U), compute_uv=False)
    assert 0.5 <= sv.min() and sv.max() <= 1.5


def test_mode_parse():
    assert Mode.parse("highp") is Mode.HIGH_P
    assert Mode.parse("dense_pstable") is Mode.DENSE_PSTABLE
    with pytest.raises(ConfigError):
        Mode.parse("bogus")
