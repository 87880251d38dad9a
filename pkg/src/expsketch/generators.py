"""Test-matrix generators used by the CLI and the experiment suite."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .randsource import SeedSpec

KINDS = ("gaussian", "tight_example", "heavy_tailed_t2", "sparse_bernoulli")


def gen_matrix(kind, n, d, density=0.1, seed=0) -> sp.csr_matrix:
    if n < d:
        raise ConfigError(f"need n >= d, got n={n}, d={d}")
    if not 0 < density <= 1:
        raise ConfigError(f"density must lie in (0, 1], got {density}")
    rng = (seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), f"gen.{kind}")).generator()
    if kind == "gaussian":
        return sp.csr_matrix(rng.standard_normal((n, d)))
    if kind == "tight_example":
        return sp.vstack([sp.identity(d, format="csr"), sp.csr_matrix((n - d, d))], format="csr")
    if kind == "heavy_tailed_t2":
        return sp.csr_matrix(rng.standard_t(2, size=(n, d)))
    if kind == "sparse_bernoulli":
        mask = rng.random((n, d)) < density
        signs = rng.choice([-1.0, 1.0], size=(n, d))
        return sp.csr_matrix(np.where(mask, signs, 0.0))
    raise ConfigError(f"unknown matrix kind {kind!r}; expected one of {KINDS}")


def planted_problem(n, d, p, seed=0, noise="t2"):
    """Gaussian M with d-1 columns and b = M x* + noise (Student-t(2) by default)."""
    rng = (seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed), "planted")).generator()
    M = rng.standard_normal((n, d - 1))
    b = M @ rng.standard_normal(d - 1)
    if noise == "t2":
        b = b + rng.standard_t(2, size=n)
    elif noise == "gaussian":
        b = b + rng.standard_normal(n)
    elif noise != "none":
        raise ConfigError(f"unknown noise {noise!r}")
    return M, b
