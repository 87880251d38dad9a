"""Matrix substrate: norms, thin QR, triangular solves and Matrix Market I/O.

Sparse inputs are ``scipy.sparse.csr_matrix`` with sorted, de-duplicated
indices; dense matrices are C-ordered float64 ``numpy`` arrays.
"""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
import scipy.io as sio
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, DimensionMismatch, RankDeficient, SingularR

RANK_RTOL = 1e-12


def as_csr(M) -> sp.csr_matrix:
    if sp.issparse(M):
        A = sp.csr_matrix(M, dtype=float)
    else:
        A = sp.csr_matrix(np.atleast_2d(np.asarray(M, dtype=float)))
    A.sum_duplicates()
    A.sort_indices()
    return A


def as_dense(M) -> np.ndarray:
    if sp.issparse(M):
        return np.ascontiguousarray(M.toarray(), dtype=float)
    return np.ascontiguousarray(np.atleast_2d(np.asarray(M, dtype=float)))


def _check_p(p):
    if not (p >= 1):
        raise ConfigError(f"norm exponent must be >= 1, got {p}")


def vec_pnorm(v, p) -> float:
    _check_p(p)
    v = np.abs(np.asarray(v, dtype=float).ravel())
    if v.size == 0:
        return 0.0
    if math.isinf(p):
        return float(v.max())
    if p == 1:
        return float(v.sum())
    if p == 2:
        return float(np.linalg.norm(v))
    # scale first so |v|**p cannot overflow for large p
    s = v.max()
    if s == 0:
        return 0.0
    return float(s * np.sum((v / s) ** p) ** (1.0 / p))


def elementwise_pnorm(M, p) -> float:
    """Entrywise p-norm (sum over all entries)."""
    data = M.data if sp.issparse(M) else np.asarray(M)
    return vec_pnorm(data, p)


def row_pnorms(M, p) -> np.ndarray:
    _check_p(p)
    if sp.issparse(M):
        A = as_csr(M)
        if math.isinf(p):
            return np.asarray(abs(A).max(axis=1).toarray()).ravel()
        return np.asarray(abs(A).power(p).sum(axis=1)).ravel() ** (1.0 / p)
    A = np.atleast_2d(np.asarray(M, dtype=float))
    return np.linalg.norm(A, ord=p, axis=1)


def qr_thin(M):
    """Householder QR with R forced to a positive diagonal.

    Raises RankDeficient when some |R_ii| < 1e-12 * max |R_jj|.
    """
    A = as_dense(M)
    n, d = A.shape
    if n < d:
        raise DimensionMismatch(f"qr_thin needs n >= d, got {A.shape}")
    Q, R = np.linalg.qr(A, mode="reduced")
    sign = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q = Q * sign
    R = R * sign[:, None]
    diag = np.abs(np.diag(R))
    if d and (not np.all(np.isfinite(diag)) or diag.min() < RANK_RTOL * diag.max() or diag.max() == 0):
        raise RankDeficient(
            f"matrix is numerically rank deficient (min |R_ii| = {diag.min():.3e}, "
            f"max |R_ii| = {diag.max():.3e})")
    return Q, R


def _check_r(R):
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionMismatch(f"R must be square, got {R.shape}")
    diag = np.abs(np.diag(R))
    if diag.size and (diag.min() == 0 or not np.all(np.isfinite(R))):
        raise SingularR("R has a zero diagonal entry")
    return R


def is_upper_triangular(R) -> bool:
    return bool(np.all(np.tril(R, -1) == 0))


def solve_r(R, x):
    """R^{-1} x by back-substitution (any invertible R; triangular fast path)."""
    R = _check_r(R)
    if is_upper_triangular(R):
        return sla.solve_triangular(R, x, lower=False)
    try:
        return np.linalg.solve(R, x)
    except np.linalg.LinAlgError as exc:
        raise SingularR(str(exc)) from exc


def right_solve_r(A, R):
    """A R^{-1} for a dense block of rows A, without forming R^{-1}."""
    R = _check_r(R)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if is_upper_triangular(R):
        return sla.solve_triangular(R, A.T, trans="T", lower=False).T
    try:
        return np.linalg.solve(R.T, A.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularR(str(exc)) from exc


def apply_r_inverse(M, R, x):
    """M (R^{-1} x); neither R^{-1} nor M R^{-1} is formed."""
    x = np.asarray(x, dtype=float)
    if M.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"M has {M.shape[1]} columns, x has length {x.shape[0]}")
    return np.asarray(M @ solve_r(R, x)).ravel() if x.ndim == 1 else np.asarray(M @ solve_r(R, x))


def iter_row_blocks(M, block=4096):
    """Yield (start, dense block) over the rows of M."""
    n = M.shape[0]
    for start in range(0, n, block):
        stop = min(n, start + block)
        chunk = M[start:stop]
        yield start, (chunk.toarray() if sp.issparse(chunk) else np.asarray(chunk, dtype=float))


# -- Matrix Market / text I/O ---------------------------------------------------

def write_mtx(path, M):
    """Write sparse (coordinate) or dense (array) Matrix Market with 17 digits."""
    target = path if isinstance(path, io.IOBase) else str(path)
    if sp.issparse(M):
        sio.mmwrite(target, as_csr(M).tocoo(), precision=17)
    else:
        sio.mmwrite(target, np.atleast_2d(np.asarray(M, dtype=float)), precision=17)


def read_mtx(path, dense=False):
    target = path if isinstance(path, io.IOBase) else str(path)
    A = sio.mmread(target)
    if dense:
        return as_dense(A)
    return as_csr(A)


def write_vector(path, v):
    np.savetxt(path, np.asarray(v, dtype=float).ravel(), fmt="%.17g")


def read_vector(path):
    p = Path(path) if not isinstance(path, io.IOBase) else path
    if isinstance(p, Path) and p.suffix == ".mtx":
        return read_mtx(p, dense=True).ravel()
    return np.atleast_1d(np.loadtxt(p, dtype=float))
