"""Empirical checks of the embedding and regression guarantees at desk scale.

Each ``check_*`` function runs one experiment and returns a :class:`Check`
with the measured statistic, the threshold and a pass flag.  The CLI
``verify`` and ``stress-tight`` commands and the acceptance tests share them.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.optimize import minimize, minimize_scalar

from . import conditioning, distributed, regression
from .generators import gen_matrix, planted_problem
from .linalg import qr_thin, solve_r
from .randsource import SeedSpec, exp_sample
from .regression import PipelineParams, RegressionProblem
from .sketch import Mode, SketchParams, apply_sketch, build_sketch, distortion_report, tight_example_directions


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: value={self.value:.6g} threshold={self.threshold:.6g} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "threshold": self.threshold, "detail": self.detail, "seconds": self.seconds}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - t0
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _seed_list(seeds, default):
    return list(range(default)) if seeds is None else list(seeds)


def _fraction_check(name, ok, need, detail):
    ok = [bool(v) for v in ok]
    return Check(name, sum(ok) >= need, float(sum(ok)), float(need), detail)


# -- random sources -------------------------------------------------------------

@_timed
def check_max_stability(n_samples=100_000, alpha=tuple(range(1, 11)), seed=0, threshold=0.01) -> Check:
    """KS distance between max_i alpha_i/u_i and (sum alpha)/u."""
    alpha = np.asarray(alpha, dtype=float)
    root = SeedSpec(seed, "max-stability")
    U = exp_sample(root.child("many"), (n_samples, alpha.size))
    lhs = np.max(alpha / U, axis=1)
    rhs = alpha.sum() / exp_sample(root.child("one"), n_samples)
    ks = stats.ks_2samp(lhs, rhs).statistic
    return Check("max-stability KS", ks < threshold, float(ks), threshold, {"n_samples": n_samples})


@_timed
def check_tail(d=32, ts=(8, 16, 32), trials=100_000, seed=0, factor=4.0) -> Check:
    """Pr[sum_i 1/u_i >= t d] against factor * ln(t d) / t."""
    X = np.sum(1.0 / exp_sample(SeedSpec(seed, "tail"), (trials, d)), axis=1)
    rows, ok = {}, True
    for t in ts:
        emp = float(np.mean(X >= t * d))
        bound = factor * math.log(t * d) / t
        rows[t] = {"empirical": emp, "bound": bound}
        ok &= emp <= bound
    worst = max(r["empirical"] / r["bound"] for r in rows.values())
    return Check("tail comparison", ok, worst, 1.0, {"per_t": rows, "d": d, "trials": trials})


def hash_only(op):
    """The sign-hash part S of Pi = S D (diagonal replaced by ones)."""
    return replace(op, diag=np.ones(op.n))


@_timed
def check_ose(n=2000, d=10, seeds=None, need=95, lo=0.5, hi=1.5) -> Check:
    """Singular values of S U for orthonormal U with m = 8 d^2."""
    seeds = _seed_list(seeds, 100)
    m = 8 * d * d
    U, _ = qr_thin(np.random.default_rng(12345).standard_normal((n, d)))
    ok, extremes = [], []
    for s in seeds:
        op = build_sketch(Mode.LOW_P, 1.0, n, d, SeedSpec(s, "ose"), m=m)
        sv = np.linalg.svd(apply_sketch(hash_only(op), U), compute_uv=False)
        extremes.append((float(sv.min()), float(sv.max())))
        ok.append(sv.min() >= lo and sv.max() <= hi)
    chk = _fraction_check("l2 OSE singular values", ok, min(need, len(seeds)), {"m": m, "extremes": extremes})
    return chk


# -- embeddings -----------------------------------------------------------------

def random_directions(d, count, seed):
    G = SeedSpec(seed, "directions").generator().standard_normal((count, d))
    return list(G / np.linalg.norm(G, axis=1, keepdims=True))


@_timed
def check_low_sandwich(n=10_000, d=10, p=1.0, n_dirs=200, seeds=None, need=18, slack=10.0) -> Check:
    """LowP sketch, out = 2: max ratio / min ratio <= slack (d ln d)^2."""
    seeds = _seed_list(seeds, 20)
    bound = slack * (d * math.log(d)) ** 2
    M = gen_matrix("gaussian", n, d, seed=777)
    dist = []
    for s in seeds:
        op = build_sketch(Mode.LOW_P, p, n, d, SeedSpec(s, "low-sandwich"))
        rep = distortion_report(op, M, p, 2, random_directions(d, n_dirs, s))
        dist.append(rep["distortion"])
    chk = _fraction_check("p<2 sandwich", [v <= bound for v in dist], min(need, len(seeds)),
                          {"bound": bound, "distortions": dist})
    return chk


@_timed
def check_high_window(n=4096, d=5, p=3.0, cap=8192, n_dirs=200, seeds=None, need=15, slack=10.0) -> Check:
    """HighP sketch, out = inf: max ratio / min ratio <= slack (d ln d)^{2/p} d."""
    seeds = _seed_list(seeds, 20)
    bound = slack * (d * math.log(d)) ** (2.0 / p) * d
    M = gen_matrix("gaussian", n, d, seed=778)
    params = SketchParams(practical_cap=cap)
    dist = []
    for s in seeds:
        op = build_sketch(Mode.HIGH_P, p, n, d, SeedSpec(s, "high-window"), params)
        rep = distortion_report(op, M, p, math.inf, random_directions(d, n_dirs, s))
        dist.append(rep["distortion"])
    return _fraction_check("p>2 window", [v <= bound for v in dist], min(need, len(seeds)),
                           {"bound": bound, "distortions": dist, "m": op.m})


@_timed
def check_tight(d=64, n=4096, seeds=None, need=None, slack=10.0, mode=Mode.LOW_P) -> Check:
    """Distortion of Pi on (I_d, 0)^T with the adversarial directions, p = 1, out = 2."""
    seeds = _seed_list(seeds, 40)
    need = len(seeds) // 2 if need is None else need
    bound = d ** 1.5 / (slack * math.log2(d) ** 2)
    M = gen_matrix("tight_example", n, d)
    dist = []
    for s in seeds:
        op = build_sketch(mode, 1.0, n, d, SeedSpec(s, "tight"))
        rep = distortion_report(op, M, 1.0, 2, tight_example_directions(op, d))
        dist.append(rep["distortion"])
    ok = [v >= bound for v in dist]
    return _fraction_check("tight example", ok, need,
                           {"bound": bound, "distortions": dist, "success_fraction": sum(ok) / len(seeds)})


# -- regression -----------------------------------------------------------------

@_timed
def check_regression(p, n=None, d=None, eps=0.1, seeds=None, need=18, params=PipelineParams()) -> Check:
    """Pipeline cost against the full-problem IRLS oracle at tol 1e-10."""
    seeds = _seed_list(seeds, 20)
    n = n or (10_000 if p < 2 else 2000)
    d = d or (8 if p < 2 else 5)
    factor = (1 + eps) / (1 - eps)
    ratios, kept = [], []
    for s in seeds:
        M, b = planted_problem(n, d, p, seed=SeedSpec(s, "regression-data"))
        ref = regression.residual_cost(M, b, regression.base_solver(M, b, p, tol=1e-10), p)
        res = regression.lp_regress(RegressionProblem(M, b, p, eps), params, seed=s)
        ratios.append(res.cost / ref if ref > 0 else (1.0 if res.cost == 0 else math.inf))
        rows = res.diagnostics.get("rows_sampled")
        kept.append(rows[-1] if isinstance(rows, list) else rows)
    return _fraction_check(f"regression ratio p={p}", [r <= factor for r in ratios], min(need, len(seeds)),
                           {"factor": factor, "ratios": ratios, "n": n, "d": d, "final_rows_kept": kept})


@_timed
def check_subsampled(p=1.0, c_samp=1e-3, seeds=None, need=18, eps=0.1) -> Check:
    """Regression with c_samp small enough that the final sample keeps a few
    percent of the rows (at c_samp = 1 every row is kept at this scale)."""
    chk = check_regression(p, eps=eps, seeds=seeds, need=need,
                           params=PipelineParams(c_samp=c_samp))
    chk.name = f"subsampled regression p={p} c_samp={c_samp:g}"
    return chk


def oracle_cost(A, b, p):
    """Reference minimum of ||A x - b||_p for one or two unknowns.

    p = 1: best over all square subsystems (an optimum sits at a vertex);
    one unknown: bounded scalar minimization; two unknowns: grid + Nelder-Mead.
    """
    t, k = A.shape
    f = lambda x: float(np.sum(np.abs(A @ x - b) ** p))
    if p == 1:
        best = math.inf
        for S in itertools.combinations(range(t), k):
            S = list(S)
            try:
                x = np.linalg.solve(A[S], b[S])
            except np.linalg.LinAlgError:
                continue
            best = min(best, f(x))
        return best ** (1.0 / p)
    if k == 1:
        r = minimize_scalar(lambda z: f(np.array([z])), bracket=(-10, 10), tol=1e-14)
        return r.fun ** (1.0 / p)
    x0 = np.linalg.lstsq(A, b, rcond=None)[0]
    g = np.linspace(-3, 3, 61)
    start = min(((f(x0 + np.array([u, v])), u, v) for u in g for v in g))
    r = minimize(f, x0 + np.array(start[1:]), method="Nelder-Mead",
                 options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000})
    return r.fun ** (1.0 / p)


@_timed
def check_base_solver(ps=(1, 1.3, 1.7, 2, 3), cases=100, t=50, seed=0, tol=1e-6) -> Check:
    worst = {}
    for p in ps:
        rng = SeedSpec(seed, f"oracle/p={p}").generator()
        for case in range(cases):
            k = 1 + case % 2
            A = rng.standard_normal((t, k))
            b = A @ rng.standard_normal(k) + rng.standard_t(2, size=t)
            x = regression.base_solver(A, b, p)
            c = regression.residual_cost(A, b, x, p)
            o = oracle_cost(A, b, p)
            worst[p] = max(worst.get(p, -math.inf), (c - o) / o)
    gap = max(worst.values())
    return Check("base solver oracle gap", gap <= tol, gap, tol, {"worst_by_p": worst})


# -- distributed ----------------------------------------------------------------

def ledger_closed_form(diag, k, d, p):
    """Words the protocol must send, recomputed step by step from the diagnostics."""
    m = diag["m"]
    norm = k + k
    sketch = k * m * d
    if p > 2:
        rounds, rows = 1, [diag["rows_sampled"]]
    else:
        rounds, rows = 3, [diag["rows_sampled"][0], diag["rows_sampled"][2], diag["rows_sampled"][3]]
    broadcast_r = rounds * k * d * d
    normalizer = rounds * (k + 2 * k)
    uploads = sum(rows) * (d + 2) + rounds * k
    return norm + sketch + broadcast_r + normalizer + uploads


@_timed
def check_distributed(cases=((1.0, 10_000, 8), (3.0, 2000, 5)), ks=(1, 2, 4, 8), eps=0.1, seed=0,
                      schemes=("contiguous", "round_robin"), params=PipelineParams()) -> Check:
    worst, audits, bitexact_k1 = 0.0, [], True
    for p, n, d in cases:
        M, b = planted_problem(n, d, p, seed=SeedSpec(seed, "dist-data"))
        prob = RegressionProblem(M, b, p, eps)
        central = regression.lp_regress(prob, params, seed=seed)
        for k, scheme in itertools.product(ks, schemes):
            res, ledger = distributed.dist_regress(distributed.partition_rows(prob.M_bar, k, scheme),
                                                   p, eps, seed, params)
            worst = max(worst, float(np.max(np.abs(res.x_hat - central.x_hat))))
            if k == 1:
                bitexact_k1 &= bool(np.array_equal(res.x_hat, central.x_hat))
            expected = ledger_closed_form(res.diagnostics, k, prob.d, p)
            audits.append({"p": p, "k": k, "scheme": scheme, "ledger": ledger.total, "closed_form": expected})
    audit_ok = all(a["ledger"] == a["closed_form"] for a in audits)
    return Check("distributed == centralized", worst <= 1e-12 and audit_ok and bitexact_k1, worst, 1e-12,
                 {"audits": audits, "audit_ok": audit_ok, "bitexact_k1": bitexact_k1})


# -- conditioning ---------------------------------------------------------------

def measured_mu(sketched, M, R, p, X):
    """min/max of ||Pi M y||_2 / ||M y||_p over y = R^{-1} e_j and y = R^{-1} x_s."""
    Y = solve_r(R, np.hstack([np.eye(R.shape[0]), X]))
    top = np.linalg.norm(sketched @ Y, axis=0)
    bottom = np.linalg.norm(np.asarray(M @ Y), ord=p, axis=0)
    r = top / bottom
    return float(r.min()), float(r.max())


@_timed
def check_conditioning(n=200, d=5, seeds=None, p_qr=1.0, tol=1e-6, n_dirs=None) -> Check:
    seeds = _seed_list(seeds, 20)
    n_dirs = n_dirs or conditioning.default_n_dirs(d)
    mvee_bound = 2 * d ** 1.5 * (1 + tol)
    rows, ok = [], []
    for s in seeds:
        M = gen_matrix("gaussian", n, d, seed=SeedSpec(s, "cond-data")).toarray()
        cert = conditioning.mvee_conditioner(M, tol=tol)
        v = conditioning.verify_well_conditioned(M, cert, n_dirs, SeedSpec(s, "cond-verify"))
        mvee_ok = v["alphabeta"] <= mvee_bound
        op = build_sketch(Mode.LOW_P, p_qr, n, d, SeedSpec(s, "cond-sketch"))
        PM = apply_sketch(op, M)
        _, R = qr_thin(PM)
        X = conditioning.sample_directions(d, n_dirs, SeedSpec(s, "cond-verify"))
        mu1, mu2 = measured_mu(PM, M, R, p_qr, X)
        qcert = conditioning.qr_conditioner(PM, mu1, mu2, p_qr)
        qv = conditioning.verify_well_conditioned(M, qcert, n_dirs, SeedSpec(s, "cond-verify"))
        qr_ok = qv["alphabeta"] <= qcert.alphabeta_bound * (1 + 1e-9)
        rows.append({"mvee_alphabeta": v["alphabeta"], "qr_alphabeta": qv["alphabeta"],
                     "qr_bound": qcert.alphabeta_bound})
        ok.append(mvee_ok and qr_ok)
    worst = max(r["mvee_alphabeta"] for r in rows)
    return Check("conditioning certificates", all(ok), worst, mvee_bound, {"seeds": rows})


ALL_CHECKS = {
    "max_stability": check_max_stability,
    "tail": check_tail,
    "ose": check_ose,
    "low_sandwich": check_low_sandwich,
    "high_window": check_high_window,
    "tight": check_tight,
    "regression_p1": lambda **kw: check_regression(1.0, **kw),
    "regression_p1.5": lambda **kw: check_regression(1.5, **kw),
    "regression_p3": lambda **kw: check_regression(3.0, **kw),
    "subsampled_p1": check_subsampled,
    "base_solver": check_base_solver,
    "distributed": check_distributed,
    "conditioning": check_conditioning,
}
