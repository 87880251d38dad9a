import numpy as np
import pytest


class ReplayUniforms:
    """Stands in for a Generator: hands out a fixed list of uniforms, then falls back."""

    def __init__(self, values, fallback=0):
        self.values = list(values)
        self.rng = np.random.default_rng(fallback)

    def random(self, size=None):
        if size is None:
            return self.values.pop(0) if self.values else self.rng.random()
        out = self.rng.random(size)
        flat = out.reshape(-1)
        take = min(len(self.values), flat.size)
        flat[:take] = self.values[:take]
        del self.values[:take]
        return out


@pytest.fixture
def replay():
    return ReplayUniforms
