"""Well-conditioned bases: condition estimates, QR and ellipsoid conditioners."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoConvergence, RankDeficient
from .linalg import apply_r_inverse, as_csr, qr_thin, solve_r, vec_pnorm
from .randsource import SeedSpec


def dual_exponent(p):
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def default_n_dirs(d):
    return max(1000, 50 * d)


def sample_directions(d, n_dirs, seed=0):
    """d x n_dirs unit vectors: the coordinate axes first, then uniform on the sphere."""
    if n_dirs < d:
        raise ConfigError(f"need at least d={d} directions, got {n_dirs}")
    spec = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), "directions")
    G = spec.generator().standard_normal((d, n_dirs - d))
    G /= np.linalg.norm(G, axis=0)
    return np.hstack([np.eye(d), G])


def _column_pnorms(M, X, p, block=256):
    """||M x||_p for every column x of X, in blocks to bound memory."""
    out = np.empty(X.shape[1])
    for start in range(0, X.shape[1], block):
        Y = np.asarray(M @ X[:, start:start + block])
        if math.isinf(p):
            out[start:start + block] = np.abs(Y).max(axis=0)
        else:
            out[start:start + block] = np.linalg.norm(Y, ord=p, axis=0)
    return out


def delta_p_estimate(M, p, n_dirs=None, seed=0) -> dict:
    """Sampled estimate of the lp condition number max ||Mx||_p / min ||Mx||_p over ||x||_2 = 1.

    zeta_max_est underestimates the true maximum and zeta_min_est
    overestimates the true minimum, so delta_est is a lower bound.
    """
    d = M.shape[1]
    n_dirs = n_dirs or default_n_dirs(d)
    if n_dirs < 2 * d:
        raise ConfigError("n_dirs must be at least 2d")
    qr_thin(M)  # a null direction is almost never sampled; detect rank deficiency directly
    norms = _column_pnorms(M, sample_directions(d, n_dirs, seed), p)
    lo, hi = float(norms.min()), float(norms.max())
    if lo <= 1e-300 or lo < 1e-12 * hi:
        raise RankDeficient("M x vanishes for a sampled direction")
    return {"zeta_max_est": hi, "zeta_min_est": lo, "delta_est": hi / lo}


@dataclass
class WellCondCertificate:
    """Change of basis R with the bounds it claims for M R^{-1}."""

    R: np.ndarray
    p: float
    method: str
    alpha_bound: float
    alphabeta_bound: float
    tol: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.R.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "R": self.R.tolist(), "p": _enc(self.p), "method": self.method,
            "alpha_bound": self.alpha_bound, "alphabeta_bound": self.alphabeta_bound,
            "tol": self.tol, "info": self.info,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "WellCondCertificate":
        o = json.loads(text)
        return cls(np.array(o["R"], dtype=float), _dec(o["p"]), o["method"],
                   o["alpha_bound"], o["alphabeta_bound"], o["tol"], o.get("info", {}))


def _enc(p):
    return "inf" if math.isinf(p) else p


def _dec(p):
    return math.inf if p == "inf" else float(p)


def qr_conditioner(sketched, mu1, mu2, p) -> WellCondCertificate:
    """R from the QR factorization of Pi M.

    If mu1 ||Mx||_p <= ||Pi M x||_2 <= mu2 ||Mx||_p, then M R^{-1} has
    alpha <= d^{1/p}/mu1, beta <= mu2 and alpha*beta <= d^{1/p} mu2/mu1.
    """
    if not (mu1 > 0 and mu2 >= mu1):
        raise ConfigError("need 0 < mu1 <= mu2")
    _, R = qr_thin(sketched)
    d = R.shape[0]
    return WellCondCertificate(R, p, "QR", d ** (1.0 / p) / mu1, d ** (1.0 / p) * mu2 / mu1)


def _khachiyan(A, tol, max_iter, refresh=200):
    """Centered minimum-volume ellipsoid of {+-a_i} by Khachiyan's algorithm
    with Todd-Yildirim away steps.

    Returns (u, M, kappa, iterations) with M = A^T diag(u) A and
    kappa_i = a_i^T M^{-1} a_i; stops once max kappa <= d (1 + tol).
    """
    m, d = A.shape
    u = np.full(m, 1.0 / m)

    def exact(u):
        Mx = A.T @ (A * u[:, None])
        Minv = np.linalg.inv(Mx)
        return Mx, Minv, np.einsum("ij,jk,ik->i", A, Minv, A)

    Mx, Minv, kappa = exact(u)
    bound = d * (1.0 + tol)
    for it in range(1, max_iter + 1):
        j = int(np.argmax(kappa))
        kp = kappa[j]
        if kp <= bound:
            return u, Mx, kappa, it - 1
        support = np.flatnonzero(u > 0)
        k = support[int(np.argmin(kappa[support]))]
        km = kappa[k]
        if kp / d - 1.0 >= 1.0 - km / d or u[k] >= 1.0:
            i, lam = j, (kp / d - 1.0) / (kp - 1.0)
        else:
            i = k
            # line-search optimum on the away direction, clipped so u_k stays >= 0
            lam = (km / d - 1.0) / (km - 1.0) if km > 1.0 else -np.inf
            lam = max(lam, -u[k] / (1.0 - u[k]))
        a = A[i]
        w = Minv @ a
        ki = kappa[i]
        denom = (1.0 - lam) + lam * ki
        v = A @ w
        u *= (1.0 - lam)
        u[i] += lam
        if u[i] < 1e-300:
            u[i] = 0.0
        Minv = (Minv - (lam / denom) * np.outer(w, w)) / (1.0 - lam)
        kappa = (kappa - (lam / denom) * v * v) / (1.0 - lam)
        Mx = (1.0 - lam) * Mx + lam * np.outer(a, a)
        if it % refresh == 0:
            Mx, Minv, kappa = exact(u)
    Mx, Minv, kappa = exact(u)
    if kappa.max() <= bound:
        return u, Mx, kappa, max_iter
    raise NoConvergence(
        f"MVEE did not reach tol={tol} in {max_iter} iterations "
        f"(gap {kappa.max() / d - 1.0:.3e})", best=(u, Mx, kappa))


def default_mvee_iter(d, m):
    return max(100_000, math.ceil(10 * d * math.log(max(m, 2))))


def mvee_conditioner(sketched, tol=1e-6, max_iter=None, p=math.inf, alphabeta_bound=None) -> WellCondCertificate:
    """R such that sketched @ R^{-1} is well conditioned in the l_inf sense.

    The rows of sketched R^{-1} lie in the unit l2 ball and their symmetric
    hull contains the ball of radius 1/sqrt(d (1 + tol)), hence
    alpha <= 1 and beta <= d sqrt(1 + tol) for p = inf.
    """
    S = sketched.toarray() if hasattr(sketched, "toarray") else np.asarray(sketched, dtype=float)
    m, d = S.shape
    Q, R0 = qr_thin(S)
    keep = np.any(Q != 0, axis=1)
    max_iter = max_iter or default_mvee_iter(d, m)
    u, Mq, kappa, iters = _khachiyan(Q[keep], tol, max_iter)
    kmax = float(kappa.max())
    G = kmax * Mq
    Rq = np.linalg.cholesky(G).T
    R = Rq @ R0
    if alphabeta_bound is None:
        alphabeta_bound = 2.0 * d ** 1.5 * (1.0 + tol) if math.isinf(p) \
            else 2.0 * d ** (1.0 + max(0.5, 1.0 / p)) * (1.0 + tol)
    return WellCondCertificate(R, p, "MVEE", 1.0, alphabeta_bound, tol,
                               {"iterations": iters, "gap": kmax / d - 1.0,
                                "support": int(np.count_nonzero(u))})


def verify_well_conditioned(M, cert: WellCondCertificate, n_dirs=None, seed=0) -> dict:
    """Exact alpha and a sampled lower estimate of beta for M R^{-1}."""
    A = as_csr(M)
    d = A.shape[1]
    p = cert.p
    q = dual_exponent(p)
    cols = np.column_stack([apply_r_inverse(A, cert.R, e) for e in np.eye(d)])
    alpha = vec_pnorm(cols.ravel(), p)
    X = sample_directions(d, n_dirs or default_n_dirs(d), seed)
    den = _column_pnorms(A, solve_r(cert.R, X), p)
    num = np.array([vec_pnorm(x, q) for x in X.T])
    if np.any(den == 0):
        beta = math.inf
    else:
        beta = float(np.max(num / den))
    return {"alpha_exact": alpha, "beta_lower_est": beta,
            "alphabeta": alpha * beta, "passes": bool(alpha * beta <= cert.alphabeta_bound)}
