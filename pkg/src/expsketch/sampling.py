"""Row sampling by lp leverage scores of a well-conditioned basis."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, IndexOutOfRange
from .linalg import as_csr, iter_row_blocks, right_solve_r
from .randsource import SeedSpec


def sampling_target(alphabeta, d, p, eps, c_samp=1.0) -> int:
    """Number of rows t needed for a (1 +- eps)-distortion sample."""
    if not 0 < eps < 1:
        raise ConfigError(f"eps must lie in (0, 1), got {eps}")
    if alphabeta < 1:
        raise ConfigError(f"alpha*beta must be >= 1, got {alphabeta}")
    if c_samp <= 0:
        raise ConfigError("c_samp must be positive")
    dim_factor = d if p < 2 else d ** (p / 2.0)
    # log-space: (alpha beta)^p can overflow for the worst-case bounds
    log_t = (math.log(c_samp) + p * math.log(alphabeta) + math.log(dim_factor)
             + math.log(math.log(1.0 / eps)) - 2.0 * math.log(eps))
    if log_t > 60:
        return 2 ** 62
    return int(math.ceil(c_samp * alphabeta ** p * dim_factor * math.log(1.0 / eps) / eps ** 2))


def leverage_scores(M, R, p, block=4096) -> np.ndarray:
    """lambda_i = ||row i of M R^{-1}||_p^p, a block of rows at a time."""
    out = np.empty(M.shape[0])
    for start, rows in iter_row_blocks(M, block):
        U = right_solve_r(rows, R)
        out[start:start + rows.shape[0]] = np.sum(np.abs(U) ** p, axis=1)
    return out


def probs_from_scores(scores, t, total=None) -> np.ndarray:
    """p_i = min(1, t lambda_i / Lambda); ``total`` lets a caller pass a global Lambda."""
    total = float(np.sum(scores)) if total is None else float(total)
    if total <= 0:
        raise ConfigError("leverage scores sum to zero")
    return np.minimum(1.0, t * np.asarray(scores) / total)


def leverage_probs(M, R, p, t, total=None) -> np.ndarray:
    return probs_from_scores(leverage_scores(M, R, p), t, total)


@dataclass
class SamplingMatrix:
    source_rows: np.ndarray
    weights: np.ndarray
    probs: np.ndarray
    t_target: float
    p: float

    def __len__(self):
        return len(self.source_rows)

    def to_json(self) -> str:
        return json.dumps({"source_rows": self.source_rows.tolist(), "weights": self.weights.tolist(),
                           "probs": self.probs.tolist(), "t_target": self.t_target, "p": self.p})

    @classmethod
    def from_json(cls, text) -> "SamplingMatrix":
        o = json.loads(text)
        return cls(np.array(o["source_rows"], dtype=np.int64), np.array(o["weights"], dtype=float),
                   np.array(o["probs"], dtype=float), o["t_target"], o["p"])


def sampling_uniforms(seed, n) -> np.ndarray:
    """One uniform per global row; every party regenerates the same vector."""
    spec = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), "sampling")
    return spec.generator().random(n)


def draw_sampling(probs, p, seed, row_ids=None, n_total=None, t_target=None) -> SamplingMatrix:
    """Keep row i independently with probability p_i; weight p_i**(-1/p).

    With ``row_ids``/``n_total`` a machine draws only its own rows while using
    the same per-row coin as a centralized run.
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ConfigError("sampling probabilities must lie in [0, 1]")
    if row_ids is None:
        coins = sampling_uniforms(seed, probs.size)
        row_ids = np.arange(probs.size)
    else:
        row_ids = np.asarray(row_ids, dtype=np.int64)
        coins = sampling_uniforms(seed, n_total)[row_ids]
    keep = coins < probs
    kept = probs[keep]
    return SamplingMatrix(row_ids[keep], kept ** (-1.0 / p), kept,
                          float(t_target) if t_target is not None else float(probs.sum()), p)


def apply_sampling(sigma: SamplingMatrix, M, local_ids=None) -> sp.csr_matrix:
    """Gather and rescale the selected rows.  ``local_ids`` maps source rows to rows of M."""
    A = as_csr(M)
    idx = sigma.source_rows if local_ids is None else np.asarray(local_ids)
    if len(idx) and (idx.min() < 0 or idx.max() >= A.shape[0]):
        raise IndexOutOfRange(f"sampled row index out of range for {A.shape[0]} rows")
    return as_csr(sp.diags(sigma.weights) @ A[idx])
