"""lp regression: an IRLS base solver and the sketch-condition-sample pipelines.

Both pipelines reduce min_x ||M x - b||_p over n rows to a small weighted row
sample whose solution is a (1+eps)/(1-eps) approximation:

* p > 2:      hash sketch (HighP) -> ellipsoid conditioner -> one sample -> solve
* 1 <= p < 2: hash sketch (LowP) -> QR -> sample at 1/2 -> dense p-stable
              sketch -> QR -> sample at 1/2 -> ellipsoid conditioner ->
              sample at eps -> solve
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import conditioning, sampling
from .errors import ConfigError, DimensionMismatch, RankDeficient, SampleTooSmall
from .linalg import as_csr, qr_thin, vec_pnorm
from .randsource import SeedSpec
from .sketch import Mode, SketchParams, apply_sketch, build_sketch, target_dim


# -- base solver ---------------------------------------------------------------

@dataclass
class SolverInfo:
    converged: bool
    stages: int
    iterations: int
    objective: float
    history: list = field(default_factory=list)


def _smoothed(r, delta, p):
    if delta == 0:
        return float(np.sum(np.abs(r) ** p))
    return float(np.sum((r * r + delta * delta) ** (p / 2.0)))


def _weighted_ls(A, b, w):
    sw = np.sqrt(w / w.max())
    Aw = A * sw[:, None]
    Q, R = np.linalg.qr(Aw, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= 1e-13 * max(diag.max(), 1e-300):
        # degenerate stage: ridge on the normal equations
        G = Aw.T @ Aw
        G[np.diag_indices_from(G)] += 1e-12 * max(np.trace(G), 1e-300)
        return np.linalg.solve(G, Aw.T @ (b * sw))
    return sla.solve_triangular(R, Q.T @ (b * sw))


def _polish_l1(A, b, x):
    """Move an approximate l1 minimizer onto the vertex its smallest residuals define."""
    k = A.shape[1]
    best, best_cost = x, vec_pnorm(A @ x - b, 1)
    order = np.argsort(np.abs(A @ x - b))
    for extra in range(0, 3):
        S = order[: k + extra]
        cand = np.linalg.lstsq(A[S], b[S], rcond=None)[0]
        c = vec_pnorm(A @ cand - b, 1)
        if c < best_cost:
            best, best_cost = cand, c
    return best


def base_solver(A, b, p, tol=1e-9, max_stages=100, full_output=False, max_inner=200):
    """Minimize ||A x - b||_p by smoothed IRLS.

    Weights (r_i^2 + delta^2)^((p-2)/2) with delta shrinking geometrically
    from ||b||_inf down to tol * scale.  Each iterate solves a weighted least
    squares problem by QR and takes a step along the IRLS direction chosen by
    a line search on the smoothed objective, so the objective never increases
    at a fixed delta.  With ``full_output`` returns (x, SolverInfo); if
    max_stages is hit the best iterate is returned with converged=False.
    """
    A = A.toarray() if sp.issparse(A) else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    t, k = A.shape
    if b.shape[0] != t:
        raise DimensionMismatch(f"A has {t} rows, b has {b.shape[0]}")
    if not p >= 1 or math.isinf(p):
        raise ConfigError(f"base_solver needs p in [1, inf), got {p}")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    x = _weighted_ls(A, b, np.ones(t))
    info = SolverInfo(True, 0, 1, vec_pnorm(A @ x - b, p))
    if p == 2 or k == 0:
        return (x, info) if full_output else x
    scale = float(np.abs(b).max())
    if scale == 0:
        x = np.zeros(k)
        info.objective = 0.0
        return (x, info) if full_output else x
    delta_min = tol * scale
    delta = max(scale, delta_min)
    shrink = 0.1
    iters = 0
    converged = False
    stage = 0
    for stage in range(1, max_stages + 1):
        r = A @ x - b
        f = _smoothed(r, delta, p)
        for _ in range(max_inner):
            w = (r * r + delta * delta) ** ((p - 2.0) / 2.0) if delta > 0 else np.abs(r) ** (p - 2.0)
            direction = _weighted_ls(A, b, w) - x
            iters += 1
            Ad = A @ direction
            step, f_new = 1.0, _smoothed(r + Ad, delta, p)
            if f_new < f:
                # expand while it keeps helping (IRLS under-steps for p < 2)
                while step < 64:
                    f_try = _smoothed(r + 2 * step * Ad, delta, p)
                    if f_try >= f_new:
                        break
                    step, f_new = 2 * step, f_try
            else:
                while f_new >= f and step > 1e-12:
                    step *= 0.5
                    f_new = _smoothed(r + step * Ad, delta, p)
                if f_new >= f:
                    break
            x = x + step * direction
            r = r + step * Ad
            decrease = f - f_new
            f = f_new
            info.history.append((stage, delta, f))
            if decrease <= 1e-15 * f or np.abs(step * direction).max() <= 1e-14 * max(1.0, np.abs(x).max()):
                break
        if delta <= delta_min:
            converged = True
            break
        delta = max(delta * shrink, delta_min)
    if p == 1:
        x = _polish_l1(A, b, x)
    info.converged = converged
    info.stages = stage
    info.iterations = iters
    info.objective = vec_pnorm(A @ x - b, p)
    if not converged and not full_output:
        warnings.warn(f"base_solver stopped after {max_stages} stages before delta reached its floor",
                      RuntimeWarning, stacklevel=2)
    return (x, info) if full_output else x


def residual_cost(M, b, x, p) -> float:
    b = np.asarray(b, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if M.shape[1] != x.shape[0] or M.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"shapes M{M.shape}, x({x.shape[0]}), b({b.shape[0]}) do not align")
    return vec_pnorm(np.asarray(M @ x).ravel() - b, p)


# -- problem / result types ----------------------------------------------------

@dataclass
class RegressionProblem:
    M: sp.csr_matrix
    b: np.ndarray
    p: float
    eps: float

    def __post_init__(self):
        self.M = as_csr(self.M)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.M.shape[0] != self.b.shape[0]:
            raise DimensionMismatch("M and b must have the same number of rows")
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")
        if not (self.p >= 1) or math.isinf(self.p):
            raise ConfigError(f"p must lie in [1, inf), got {self.p}")
        if self.d < 2 or self.n < self.d:
            raise ConfigError(f"need n >= d >= 2 (d counts b), got n={self.n}, d={self.d}")

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def d(self):
        return self.M.shape[1] + 1

    @property
    def M_bar(self) -> sp.csr_matrix:
        return as_csr(sp.hstack([self.M, sp.csr_matrix(-self.b[:, None])]))


@dataclass
class RegressionResult:
    x_hat: np.ndarray
    cost: float
    approx_factor_claimed: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"x_hat": [float(v) for v in self.x_hat], "cost": self.cost,
                "approx_factor_claimed": self.approx_factor_claimed,
                "diagnostics": _jsonable(self.diagnostics)}


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else str(v)
    return o


@dataclass(frozen=True)
class PipelineParams:
    sketch: SketchParams = field(default_factory=lambda: SketchParams(practical_cap=4096))
    c_samp: float = 1.0
    mu_c: float = 4.0
    mvee_tol: float = 1e-6
    mvee_max_iter: int | None = None
    solver_tol: float = 1e-9
    max_stages: int = 100
    n_dirs: int | None = None
    max_retries: int = 5

    def __post_init__(self):
        if self.c_samp <= 0 or self.mu_c <= 0 or self.mvee_tol <= 0 or self.solver_tol <= 0:
            raise ConfigError("pipeline constants must be positive")


def _as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), "regress")


def sketch_mu(d, p, c):
    """(mu1, mu2) = (1/(c (d log d)^{1/p}), c (d log d)^{1/p})."""
    g = (d * math.log(d)) ** (1.0 / p)
    return 1.0 / (c * g), c * g


# -- steps shared with the distributed protocols --------------------------------

def exact_fit(PM):
    """If Pi [M, -b] is rank deficient only through b, the x with Pi M x = Pi b."""
    A, rhs = PM[:, :-1], -PM[:, -1]
    try:
        qr_thin(A)
    except RankDeficient:
        return None
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def sketch_is_deficient(PM) -> bool:
    try:
        qr_thin(PM)
    except RankDeficient:
        return True
    return False


def high_conditioning(PM, d, p, params: PipelineParams):
    """Ellipsoid conditioner on Pi Mbar; alpha*beta of Mbar R^{-1} in lp."""
    cert = conditioning.mvee_conditioner(PM, tol=params.mvee_tol, max_iter=params.mvee_max_iter)
    mu1, mu2 = sketch_mu(d, p, params.mu_c)
    # (a, b, inf) on the sketch -> (b mu2, d^{1/p} a / mu1, p) on Mbar
    alphabeta = cert.alphabeta_bound * d ** (1.0 / p) * mu2 / mu1
    return cert, alphabeta


def target_rows(alphabeta, d, p, eps, params: PipelineParams):
    c = params.c_samp
    t = sampling.sampling_target(alphabeta, d, p, eps, c)
    tries = 0
    while t < d:
        tries += 1
        if tries > params.max_retries:
            raise SampleTooSmall(f"sampling target {t} < d={d} after {params.max_retries} doublings")
        c *= 2
        t = sampling.sampling_target(alphabeta, d, p, eps, c)
    return t


def second_stage_alphabeta(d, p, t2, params: PipelineParams):
    """Claimed alpha*beta after QR of the composed sketch Pi^2 Pi^1 Mbar."""
    mu1 = 0.5 / (params.mu_c * t2 ** (1.0 / p - 0.5))
    mu2 = 1.5 * params.mu_c * (d * math.log(d)) ** (1.0 / p)
    return d ** (1.0 / p) * mu2 / mu1


def measured_alphabeta(sub, R, p, params: PipelineParams, seed: SeedSpec):
    """alpha_exact * beta_lower_est of sub R^{-1}; no closed form is claimed for R1."""
    cert = conditioning.WellCondCertificate(R, p, "QR", math.inf, math.inf)
    return conditioning.verify_well_conditioned(sub, cert, params.n_dirs, seed.child("verify.R1"))["alphabeta"]


def final_conditioning(sub, d, p, params: PipelineParams, seed: SeedSpec):
    """Ellipsoid conditioner on the sampled rows, checked against 2 d^{1+1/p};
    falls back to QR with the measured alpha*beta when the check fails."""
    bound = 2.0 * d ** (1.0 + 1.0 / p) * (1.0 + params.mvee_tol)
    cert = conditioning.mvee_conditioner(sub, tol=params.mvee_tol, max_iter=params.mvee_max_iter,
                                         p=p, alphabeta_bound=bound)
    check = conditioning.verify_well_conditioned(sub, cert, params.n_dirs, seed.child("verify"))
    info = {"mvee_alphabeta_measured": check["alphabeta"], "mvee_passes": check["passes"],
            "fallback": False}
    if check["passes"]:
        return cert.R, bound, info
    _, R = qr_thin(sub)
    qcert = conditioning.WellCondCertificate(R, p, "QR", math.inf, math.inf)
    qcheck = conditioning.verify_well_conditioned(sub, qcert, params.n_dirs, seed.child("verify"))
    info.update(fallback=True, qr_alphabeta_measured=qcheck["alphabeta"])
    return R, max(bound, qcheck["alphabeta"]), info


def solve_sampled(sub, p, params: PipelineParams):
    A = sub.toarray() if sp.issparse(sub) else np.asarray(sub)
    x, info = base_solver(A[:, :-1], -A[:, -1], p, tol=params.solver_tol,
                          max_stages=params.max_stages, full_output=True)
    return x, info


def sample_is_usable(sub, d, full=False) -> bool:
    """Sampled rows must give M full column rank; with ``full`` the whole of
    Mbar (needed when the sample feeds a conditioner)."""
    A = sub.toarray() if sp.issparse(sub) else np.asarray(sub)
    A = A if full else A[:, :-1]
    if A.shape[0] < A.shape[1]:
        return False
    try:
        qr_thin(A)
    except RankDeficient:
        return False
    return True


def _sample_round(Mbar, R, p, t, seed: SeedSpec, params: PipelineParams, full=False):
    """Leverage-score sample of Mbar; doubles t and redraws on rank-deficient samples."""
    d = Mbar.shape[1]
    scores = sampling.leverage_scores(Mbar, R, p)
    total = float(np.sum(scores))
    for attempt in range(params.max_retries + 1):
        probs = sampling.probs_from_scores(scores, t, total)
        sig = sampling.draw_sampling(probs, p, seed if attempt == 0 else seed.child(f"retry{attempt}"),
                                     t_target=t)
        sub = sampling.apply_sampling(sig, Mbar)
        if sample_is_usable(sub, d, full):
            return sig, sub, t
        t *= 2
    raise RankDeficient("sampled subproblem stayed rank deficient after retries")


def _finish(prob, x, diag, t0):
    diag["seconds"] = time.perf_counter() - t0
    return RegressionResult(np.asarray(x, dtype=float), residual_cost(prob.M, prob.b, x, prob.p),
                            (1 + prob.eps) / (1 - prob.eps), diag)


def _exact_fit_result(prob, PM, diag, t0):
    x = exact_fit(PM)
    if x is None:
        raise RankDeficient("[M, -b] is rank deficient and M itself is rank deficient")
    cost = residual_cost(prob.M, prob.b, x, prob.p)
    if cost > 1e-8 * max(vec_pnorm(prob.b, prob.p), 1e-300):
        raise RankDeficient("sketch of [M, -b] is rank deficient but b is not in range(M)")
    diag["exact_fit"] = True
    return _finish(prob, x, diag, t0)


# -- pipelines -------------------------------------------------------------------

def lp_regress_high(prob: RegressionProblem, params: PipelineParams = PipelineParams(), seed=0) -> RegressionResult:
    """(1+eps)/(1-eps)-approximate lp regression for p > 2."""
    if not prob.p > 2:
        raise ConfigError("lp_regress_high needs p > 2")
    t0 = time.perf_counter()
    seed = _as_seed(seed)
    Mbar, d, p = prob.M_bar, prob.d, prob.p
    op = build_sketch(Mode.HIGH_P, p, prob.n, d, seed.child("sketch"), params.sketch)
    PM = apply_sketch(op, Mbar)
    diag = {"m": op.m, "exact_fit": False}
    if sketch_is_deficient(PM):
        return _exact_fit_result(prob, PM, diag, t0)
    cert, alphabeta = high_conditioning(PM, d, p, params)
    diag["mvee"] = cert.info
    t = target_rows(alphabeta, d, p, prob.eps, params)
    sig, sub, t = _sample_round(Mbar, cert.R, p, t, seed.child("sampling.1"), params)
    diag.update(alphabeta_claimed=alphabeta, t=t, rows_sampled=len(sig))
    x, info = solve_sampled(sub, p, params)
    diag["solver"] = {"converged": info.converged, "stages": info.stages, "iterations": info.iterations}
    return _finish(prob, x, diag, t0)


def lp_regress_low(prob: RegressionProblem, params: PipelineParams = PipelineParams(), seed=0) -> RegressionResult:
    """(1+eps)/(1-eps)-approximate lp regression for 1 <= p < 2 (nine steps)."""
    if not 1 <= prob.p < 2:
        raise ConfigError("lp_regress_low needs 1 <= p < 2")
    t0 = time.perf_counter()
    seed = _as_seed(seed)
    Mbar, d, p = prob.M_bar, prob.d, prob.p
    # 1. hash sketch
    op = build_sketch(Mode.LOW_P, p, prob.n, d, seed.child("sketch"), params.sketch)
    PM = apply_sketch(op, Mbar)
    diag = {"m": op.m, "exact_fit": False}
    if sketch_is_deficient(PM):
        return _exact_fit_result(prob, PM, diag, t0)
    # 2. QR conditioner
    mu1, mu2 = sketch_mu(d, p, params.mu_c)
    cert = conditioning.qr_conditioner(PM, mu1, mu2, p)
    # 3. constant-distortion sample
    t1 = target_rows(cert.alphabeta_bound, d, p, 0.5, params)
    sig1, sub1, t1 = _sample_round(Mbar, cert.R, p, t1, seed.child("sampling.1"), params, full=True)
    # 4. dense p-stable sketch of the sample
    t2 = target_dim(Mode.DENSE_PSTABLE, p, max(d, 2), d, params.sketch)
    op2 = build_sketch(Mode.DENSE_PSTABLE, p, sub1.shape[0], d, seed.child("dense"), params.sketch, m=t2)
    P3M = apply_sketch(op2, sub1)
    # 5. QR of the composed sketch
    _, R1 = qr_thin(P3M)
    ab1 = second_stage_alphabeta(d, p, t2, params)
    # 6. second constant-distortion sample
    t3 = target_rows(ab1, d, p, 0.5, params)
    sig4, sub4, t3 = _sample_round(Mbar, R1, p, t3, seed.child("sampling.4"), params, full=True)
    ab1_measured = measured_alphabeta(sub4, R1, p, params, seed)
    # 7. ellipsoid conditioner on the sample
    R2, ab2, cond_info = final_conditioning(sub4, d, p, params, seed)
    # 8. final eps-distortion sample
    t4 = target_rows(ab2, d, p, prob.eps, params)
    sig5, sub5, t4 = _sample_round(Mbar, R2, p, t4, seed.child("sampling.5"), params)
    # 9. solve the sampled problem
    x, info = solve_sampled(sub5, p, params)
    diag.update({
        "t1": t1, "t2": t2, "t3": t3, "t4": t4,
        "rows_sampled": [len(sig1), int(P3M.shape[0]), len(sig4), len(sig5)],
        "alphabeta_claimed": [cert.alphabeta_bound, ab1, ab2],
        "alphabeta_R1_measured": ab1_measured,
        "conditioning": cond_info,
        "solver": {"converged": info.converged, "stages": info.stages, "iterations": info.iterations},
    })
    return _finish(prob, x, diag, t0)


def lp_regress(prob: RegressionProblem, params: PipelineParams = PipelineParams(), seed=0) -> RegressionResult:
    if prob.p > 2:
        return lp_regress_high(prob, params, seed)
    if prob.p < 2:
        return lp_regress_low(prob, params, seed)
    t0 = time.perf_counter()
    x = base_solver(prob.M, prob.b, 2.0)
    return _finish(prob, x, {"direct_least_squares": True}, t0)


def hyperplane_fit_l1(A, eps, params: PipelineParams = PipelineParams(), seed=0) -> dict:
    """min over W with W_ii = -1 of ||A W||_1, one l1 regression per column."""
    A = as_csr(A)
    n, d = A.shape
    if d < 2:
        raise ConfigError("hyperplane fitting needs d >= 2")
    seed = _as_seed(seed)
    W = -np.eye(d)
    costs = []
    for i in range(d):
        others = [j for j in range(d) if j != i]
        prob = RegressionProblem(A[:, others], A[:, i].toarray().ravel(), 1.0, eps)
        res = lp_regress_low(prob, params, seed.child(f"column{i}"))
        W[others, i] = res.x_hat
        costs.append(res.cost)
    return {"W": W, "cost": float(np.sum(costs)), "column_costs": costs,
            "best_column": int(np.argmin(costs))}
