"""Oblivious lp subspace embeddings  Pi = S D.

S is a hashed sign matrix with s nonzeros per column (one in each of s row
blocks of height m/s, value +-1/sqrt(s)); D is diagonal with entries
u_i**(-1/p) for i.i.d. standard exponentials u_i.  A dense p-stable sketch is
provided as well for the second stage of the 1 <= p < 2 regression pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import randsource
from .errors import ConfigError, DimensionMismatch, ZeroDirection
from .linalg import as_csr, vec_pnorm
from .randsource import SeedSpec


class Mode(str, Enum):
    HIGH_P = "HighP"
    LOW_P = "LowP"
    L1 = "L1"
    DENSE_PSTABLE = "DensePStable"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for mode in cls:
            if mode.value.lower() == key:
                return mode
        raise ConfigError(f"unknown sketch mode {value!r}")


@dataclass(frozen=True)
class GlobalParams:
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ConfigError("c1 and c2 must be positive")

    def rho(self, d):
        return self.c1 * d * math.log(d)

    def iota(self, d, p):
        return 1.0 / (2.0 * self.rho(d) ** (1.0 / p))

    def eta(self, d, n):
        return self.c2 * d * math.log(d) * math.log(n)

    def tau(self, d, n, p):
        return self.iota(d, p) / (d * self.eta(d, n))


@dataclass(frozen=True)
class SketchParams:
    """Free constants of the constructions (the theory only fixes them up to O(.))."""

    globals: GlobalParams = field(default_factory=GlobalParams)
    c_ose: float = 8.0
    c_dense: float = 4.0
    gamma: float = 0.1
    s_low: int = 2
    practical_cap: int | None = None

    def __post_init__(self):
        if self.c_ose <= 0 or self.c_dense <= 0 or self.gamma <= 0 or self.s_low < 1:
            raise ConfigError("sketch constants must be positive")
        if self.practical_cap is not None and self.practical_cap < 1:
            raise ConfigError("practical_cap must be a positive integer")


def sparsity(mode, d, params: SketchParams = SketchParams()) -> int:
    mode = Mode.parse(mode)
    if mode is Mode.HIGH_P:
        return 1
    if mode is Mode.LOW_P:
        return params.s_low
    if mode is Mode.L1:
        return max(1, math.ceil(math.log2(d) ** 2))
    return 0


def _check_mode_p(mode, p):
    if not p > 0:
        raise ConfigError(f"p must be positive, got {p}")
    if mode is Mode.HIGH_P and p <= 2:
        raise ConfigError("HighP sketch requires p > 2")
    if mode in (Mode.LOW_P, Mode.L1) and p >= 2:
        raise ConfigError(f"{mode.value} sketch requires p < 2")
    if mode in (Mode.LOW_P, Mode.L1, Mode.HIGH_P) and p < 1:
        raise ConfigError("p must be >= 1")
    if mode is Mode.DENSE_PSTABLE and p > 2:
        raise ConfigError("p-stable sketch requires p <= 2")


def target_dim(mode, p, n, d, params: SketchParams = SketchParams(), practical_cap=None) -> int:
    mode = Mode.parse(mode)
    _check_mode_p(mode, p)
    if not (n >= d >= 2):
        raise ConfigError(f"need n >= d >= 2, got n={n}, d={d}")
    cap = practical_cap if practical_cap is not None else params.practical_cap
    if mode is Mode.HIGH_P:
        g = params.globals
        # log-space so the d**(5+4p) term never overflows
        a = 6.0 * n ** (1.0 - 2.0 / p) * g.eta(d, n) / g.iota(d, p) ** 2
        log_b = (5.0 + 4.0 * p) * math.log(d)
        if cap is not None and (a >= cap or log_b >= math.log(cap)):
            m = cap
        elif log_b > 700:
            raise ConfigError("theoretical HighP dimension overflows; pass practical_cap")
        else:
            m = math.ceil(a + math.exp(log_b))
            if cap is not None:
                m = min(m, cap)
    elif mode is Mode.LOW_P:
        m = math.ceil(params.c_ose * d ** (1.0 + params.gamma))
    elif mode is Mode.L1:
        m = math.ceil(params.c_ose * d * math.log2(d) ** 2)
    else:
        m = math.ceil(params.c_dense * d * math.log2(d))
    s = sparsity(mode, d, params)
    if s > 1:
        m = s * math.ceil(m / s)
    return int(m)


@dataclass
class SketchOperator:
    """Immutable m x n embedding.  ``rows``/``signs`` have shape (n, s)."""

    mode: Mode
    p: float
    n: int
    d: int
    m: int
    s: int
    seed: SeedSpec | None
    rows: np.ndarray | None = None
    signs: np.ndarray | None = None
    diag: np.ndarray | None = None
    dense: np.ndarray | None = None
    params: SketchParams = field(default_factory=SketchParams)
    identity: bool = False

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def scale(self):
        return 1.0 / math.sqrt(self.s) if self.s else 1.0

    def to_matrix(self) -> np.ndarray:
        """Explicit dense m x n matrix (testing and small instances only)."""
        if self.dense is not None:
            return self.dense.copy()
        P = np.zeros((self.m, self.n))
        cols = np.arange(self.n)
        for j in range(self.s):
            np.add.at(P, (self.rows[:, j], cols), self.signs[:, j] * self.scale * self.diag)
        return P

    def to_sparse(self) -> sp.csr_matrix:
        if self.dense is not None:
            return sp.csr_matrix(self.dense)
        cols = np.repeat(np.arange(self.n), self.s)
        vals = (self.signs * self.scale * self.diag[:, None]).ravel()
        return sp.csr_matrix((vals, (self.rows.ravel(), cols)), shape=(self.m, self.n))

    def describe(self) -> dict:
        return {
            "mode": self.mode.value, "p": self.p, "n": self.n, "d": self.d,
            "m": self.m, "s": self.s, "identity": self.identity,
            "master_seed": None if self.seed is None else self.seed.master_seed,
            "stream_label": None if self.seed is None else self.seed.stream_label,
            "params": {
                "c1": self.params.globals.c1, "c2": self.params.globals.c2,
                "c_ose": self.params.c_ose, "c_dense": self.params.c_dense,
                "gamma": self.params.gamma, "s_low": self.params.s_low,
                "practical_cap": self.params.practical_cap,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SketchOperator":
        desc = json.loads(text)
        if desc["identity"]:
            return identity_operator(desc["n"], desc["p"])
        pr = dict(desc["params"])
        params = SketchParams(globals=GlobalParams(pr.pop("c1"), pr.pop("c2")), **pr)
        seed = SeedSpec(desc["master_seed"], desc["stream_label"])
        return build_sketch(desc["mode"], desc["p"], desc["n"], desc["d"], seed, params, m=desc["m"])


def build_sketch(mode, p, n, d, seed, params: SketchParams = SketchParams(), m=None) -> SketchOperator:
    """Build Pi deterministically from (mode, p, n, d, seed, params).

    ``m`` overrides the target dimension (it is still rounded up to a multiple
    of the sparsity).
    """
    mode = Mode.parse(mode)
    _check_mode_p(mode, p)
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(int(seed), "sketch")
    if n < 1:
        raise ConfigError("n must be positive")
    s = sparsity(mode, max(d, 2), params)
    if m is None:
        m = target_dim(mode, p, max(n, d, 2), max(d, 2), params)
    elif s > 1:
        m = s * math.ceil(m / s)
    if mode is Mode.DENSE_PSTABLE:
        # scaled by m**(-1/p) so the sketch is norm-preserving in the median
        entries = randsource.pstable_sample(p, seed.child("dense.entries").generator(), (m, n))
        return SketchOperator(mode, p, n, d, m, 0, seed, dense=entries * m ** (-1.0 / p), params=params)
    block = m // s
    h = seed.child("ose.h").generator().integers(0, block, size=(n, s))
    rows = h + block * np.arange(s)[None, :]
    signs = seed.child("ose.sigma").generator().choice(np.array([-1.0, 1.0]), size=(n, s))
    diag = randsource.recip_exp_pow_sample(p, seed.child("diag.u").generator(), n)
    return SketchOperator(mode, p, n, d, m, s, seed, rows=rows, signs=signs, diag=diag, params=params)


def identity_operator(n, p=2.0) -> SketchOperator:
    """Testing hook: m = n, s = 1, all signs +1, all u_i = 1."""
    return SketchOperator(Mode.LOW_P if p < 2 else Mode.HIGH_P, p, n, n, n, 1, None,
                          rows=np.arange(n)[:, None], signs=np.ones((n, 1)),
                          diag=np.ones(n), identity=True)


def apply_sketch(op: SketchOperator, M, row_ids=None) -> np.ndarray:
    """Pi M as a dense m x d array in one pass over the nonzeros of M.

    ``row_ids`` maps the rows of M to columns of Pi (a machine's shard holds a
    subset of the global rows); default is the identity.  Contributions are
    accumulated in row-major nonzero order, block by block, so the result is
    deterministic.
    """
    n_local = M.shape[0]
    if row_ids is None:
        if n_local != op.n:
            raise DimensionMismatch(f"sketch has {op.n} columns but M has {n_local} rows")
        row_ids = np.arange(n_local)
    else:
        row_ids = np.asarray(row_ids, dtype=np.int64)
        if row_ids.shape != (n_local,):
            raise DimensionMismatch("row_ids must give one global index per row of M")
        if n_local and (row_ids.min() < 0 or row_ids.max() >= op.n):
            raise DimensionMismatch("row_ids out of range for the sketch")
    if op.dense is not None:
        A = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        return op.dense[:, row_ids] @ A
    A = as_csr(M)
    out = np.zeros((op.m, A.shape[1]))
    nz_row = np.repeat(np.arange(n_local), np.diff(A.indptr))
    g = row_ids[nz_row]
    base = A.data * op.diag[g] * op.scale
    for j in range(op.s):
        np.add.at(out, (op.rows[g, j], A.indices), op.signs[g, j] * base)
    return out


def _out_norm(Y, norm):
    if norm in ("inf", np.inf, float("inf")):
        return np.abs(Y).max(axis=0)
    norm = float(norm)
    return np.linalg.norm(Y, ord=norm, axis=0)


def distortion_report(op: SketchOperator, M, in_norm, out_norm, directions=(), sketched=None) -> dict:
    """Ratios ||Pi M x||_out / ||M x||_in over the given directions plus e_1..e_d."""
    A = as_csr(M)
    d = A.shape[1]
    X = [np.asarray(x, dtype=float).ravel() for x in directions]
    X = np.column_stack(X + [np.eye(d)]) if X else np.eye(d)
    if X.shape[0] != d:
        raise DimensionMismatch(f"directions must have length {d}")
    if np.any(np.all(X == 0, axis=0)):
        raise ZeroDirection("zero direction supplied")
    PM = apply_sketch(op, A) if sketched is None else sketched
    Y_in = np.asarray(A @ X)
    den = np.array([vec_pnorm(Y_in[:, j], in_norm) for j in range(X.shape[1])])
    if np.any(den == 0):
        raise ZeroDirection("M x = 0 for some direction; M is not full column rank")
    num = _out_norm(PM @ X, out_norm)
    ratios = num / den
    lo, hi = float(ratios.min()), float(ratios.max())
    return {"ratios": ratios, "min": lo, "max": hi,
            "distortion": hi / lo if lo > 0 else math.inf}


def tight_example_directions(op: SketchOperator, d, low=0.5, high=2.0):
    """Adversarial directions for M = (I_d, 0)^T.

    e_{i*} with i* the index of the largest 1/u_i among the first d rows, and
    the uniform vector on K = {i : 1/u_i in [low, high]} (entries 1/|K|).
    """
    inv_u = op.diag[:d] ** op.p
    i_star = int(np.argmax(inv_u))
    e = np.zeros(d)
    e[i_star] = 1.0
    K = np.flatnonzero((inv_u >= low) & (inv_u <= high))
    if K.size == 0:
        K = np.array([int(np.argmin(np.abs(np.log(inv_u))))])
    x = np.zeros(d)
    x[K] = 1.0 / K.size
    return [e, x]
