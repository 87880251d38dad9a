import math

import numpy as np
import pytest

from expsketch.conditioning import (WellCondCertificate, delta_p_estimate, dual_exponent, mvee_conditioner,
                                    qr_conditioner, sample_directions, verify_well_conditioned)
from expsketch.errors import NoConvergence, RankDeficient, SingularR
from expsketch.generators import gen_matrix
from expsketch.linalg import qr_thin, right_solve_r


def test_dual_exponent():
    assert dual_exponent(1) == math.inf
    assert dual_exponent(2) == 2
    assert dual_exponent(3) == 1.5
    assert dual_exponent(math.inf) == 1


def test_directions_include_axes_and_unit():
    X = sample_directions(4, 100, seed=1)
    assert np.array_equal(X[:, :4], np.eye(4))
    assert np.allclose(np.linalg.norm(X, axis=0), 1)


def test_delta_identity_l1():
    est = delta_p_estimate(np.eye(2), 1, n_dirs=2000, seed=0)
    assert 1 <= est["delta_est"] <= math.sqrt(2) + 1e-12
    assert est["zeta_max_est"] <= math.sqrt(2) + 1e-12 and est["zeta_min_est"] >= 1 - 1e-12
    assert est["delta_est"] > 1.4


def test_delta_orthonormal_l2():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((50, 3)))
    assert delta_p_estimate(3.7 * Q, 2, n_dirs=500)["delta_est"] == pytest.approx(1.0, abs=1e-12)


def test_delta_norm_equivalence_sandwich():
    M = gen_matrix("gaussian", 100, 4, seed=2).toarray()
    d = 4
    for p in (1.0, 1.5, 3.0):
        delta = delta_p_estimate(M, p, n_dirs=2000, seed=1)["delta_est"]
        # condition number in the (lp, ||x||_q-dual) sense via an exact alpha/beta of a QR basis
        _, R = qr_thin(M)
        cert = WellCondCertificate(R, p, "QR", math.inf, math.inf)
        v = verify_well_conditioned(M, cert, n_dirs=2000, seed=1)
        assert d ** -abs(0.5 - 1 / p) * delta <= v["alphabeta"] * d ** max(0.5, 1 / p)


def test_delta_rank_deficient():
    M = np.ones((10, 2))
    with pytest.raises(RankDeficient):
        delta_p_estimate(M, 1, n_dirs=100)


def test_qr_conditioner_examples():
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((20, 2)))
    cert = qr_conditioner(Q, 0.5, 2.0, 1.0)
    assert np.allclose(cert.R, np.eye(2), atol=1e-12)
    assert cert.alphabeta_bound == pytest.approx(2 * 2.0 / 0.5)
    cert = qr_conditioner(Q @ np.diag([2.0, 1.0]), 0.5, 2.0, 1.0)
    assert np.allclose(cert.R, np.diag([2.0, 1.0]), atol=1e-12)


def test_qr_scaling():
    S = np.random.default_rng(2).standard_normal((30, 3))
    R1 = qr_conditioner(S, 1, 1, 1).R
    R2 = qr_conditioner(4.0 * S, 1, 1, 1).R
    assert np.allclose(R2, 4.0 * R1)


def test_mvee_cross_polytope():
    cert = mvee_conditioner(np.eye(3))
    assert np.allclose(cert.R.T @ cert.R, np.eye(3), atol=1e-6)
    cert = mvee_conditioner(np.diag([3.0, 1.0]))
    assert np.allclose(cert.R.T @ cert.R, np.diag([9.0, 1.0]), rtol=1e-5)


def test_mvee_rows_in_unit_ball_and_bound():
    for seed in range(5):
        S = gen_matrix("gaussian", 200, 5, seed=seed).toarray()
        tol = 1e-6
        cert = mvee_conditioner(S, tol=tol)
        rows = np.linalg.norm(right_solve_r(S, cert.R), axis=1)
        assert rows.max() <= 1 + tol
        v = verify_well_conditioned(S, cert)
        assert v["alphabeta"] <= 2 * 5 ** 1.5 * (1 + tol)
        assert v["passes"]
        assert cert.info["gap"] <= tol


def test_mvee_hull_contains_shrunk_ellipsoid_d2():
    # the symmetric hull of the rows contains the ellipsoid shrunk by sqrt(d(1+tol))
    S = gen_matrix("gaussian", 40, 2, seed=9).toarray()
    cert = mvee_conditioner(S, tol=1e-8)
    P = right_solve_r(S, cert.R)
    pts = np.vstack([P, -P])
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    hull = pts[np.argsort(ang)]
    # support function of the hull in every direction >= radius of the shrunk ball
    for th in np.linspace(0, np.pi, 181):
        u = np.array([np.cos(th), np.sin(th)])
        assert np.max(hull @ u) >= 1 / math.sqrt(2 * (1 + 1e-8)) - 1e-9


def test_mvee_no_convergence():
    S = gen_matrix("gaussian", 300, 6, seed=1).toarray()
    with pytest.raises(NoConvergence):
        mvee_conditioner(S, tol=1e-12, max_iter=3)


def test_mvee_rank_deficient():
    with pytest.raises(RankDeficient):
        mvee_conditioner(np.ones((10, 2)))


def test_verify_orthonormal_l2():
    Q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((40, 4)))
    v = verify_well_conditioned(Q, WellCondCertificate(np.eye(4), 2, "QR", 2, 2))
    assert v["alpha_exact"] == pytest.approx(2.0)
    assert v["beta_lower_est"] <= 1 + 1e-12


def test_verify_auerbach():
    d = 6
    M = np.vstack([np.eye(d), np.zeros((10, d))])
    v = verify_well_conditioned(M, WellCondCertificate(np.eye(d), 1.0, "QR", d, d))
    assert v["alpha_exact"] == pytest.approx(d)
    assert v["beta_lower_est"] == pytest.approx(1.0)


def test_verify_singular():
    with pytest.raises(SingularR):
        verify_well_conditioned(np.eye(2), WellCondCertificate(np.zeros((2, 2)), 1, "QR", 1, 1))


def test_qr_certificate_passes_downstream():
    from expsketch.experiments import check_conditioning
    assert check_conditioning(seeds=range(3)).passed


def test_certificate_json_round_trip():
    cert = mvee_conditioner(gen_matrix("gaussian", 50, 3, seed=1).toarray())
    back = WellCondCertificate.from_json(cert.to_json())
    assert np.array_equal(back.R, cert.R) and back.p == math.inf and back.method == "MVEE"
