"""Seeded, replayable samplers.

Every random object in the package is drawn from a named stream derived from
a master seed, so two parties holding the same master seed (the machines and
server of the distributed protocols, or a centralized and a distributed run)
regenerate exactly the same sketch and sampling decisions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# exponentials below this are redrawn so that 1/u**(1/p) stays finite
EXP_FLOOR = 1e-300


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_label: str = "root"

    def child(self, label: str) -> "SeedSpec":
        return SeedSpec(self.master_seed, f"{self.stream_label}/{label}")

    def entropy(self) -> int:
        key = f"{int(self.master_seed) & 0xFFFFFFFFFFFFFFFF}:{self.stream_label}"
        return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=16).digest(), "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.entropy())))


def stream(master_seed: int, label: str) -> np.random.Generator:
    """Generator for ``label`` under ``master_seed``."""
    return SeedSpec(master_seed, label).generator()


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, SeedSpec):
        return rng.generator()
    if hasattr(rng, "random"):
        # any object with a numpy-style random(size) (used to replay fixed uniforms)
        return rng
    return np.random.default_rng(rng)


# -- inverse-CDF transforms (exposed so the closed forms can be checked) -----

def exp_from_uniform(v):
    return -np.log1p(-np.asarray(v, dtype=float))


def cauchy_from_uniform(v):
    return np.tan(np.pi * (np.asarray(v, dtype=float) - 0.5))


def recip_exp_pow(u, p):
    return np.asarray(u, dtype=float) ** (-1.0 / p)


def cms_transform(theta, w, p):
    """Chambers-Mallows-Stuck map for a standard symmetric p-stable law."""
    theta = np.asarray(theta, dtype=float)
    if p == 1:
        return np.tan(theta)
    w = np.asarray(w, dtype=float)
    return (np.sin(p * theta) / np.cos(theta) ** (1.0 / p)
            * (np.cos((1.0 - p) * theta) / w) ** ((1.0 - p) / p))


# -- samplers ------------------------------------------------------------------

def exp_sample(rng, size=None):
    rng = as_generator(rng)
    x = exp_from_uniform(rng.random(size))
    if size is None:
        while x < EXP_FLOOR:
            x = exp_from_uniform(rng.random())
        return float(x)
    bad = x < EXP_FLOOR
    while bad.any():
        x[bad] = exp_from_uniform(rng.random(int(bad.sum())))
        bad = x < EXP_FLOOR
    return x


def recip_exp_pow_sample(p, rng, size=None):
    """Draws of U**(-1/p) for exponential U (the diagonal entries of D)."""
    if not p >= 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    return recip_exp_pow(exp_sample(rng, size), p) if size is not None \
        else float(recip_exp_pow(exp_sample(rng), p))


def cauchy_sample(rng, size=None):
    rng = as_generator(rng)
    out = cauchy_from_uniform(rng.random(size))
    return float(out) if size is None else out


def pstable_sample(p, rng, size=None):
    if not 0 < p <= 2:
        raise ConfigError(f"p-stable laws exist only for p in (0, 2], got {p}")
    rng = as_generator(rng)
    theta = math.pi * (rng.random(size) - 0.5)
    w = exp_sample(rng, size)
    out = cms_transform(theta, w, p)
    return float(out) if size is None else out
