import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dttf.cp import FactorSet  # noqa: E402
from dttf.tensor import build_tensor  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tensor(rng, dims, frac=0.4):
    cells = [(i, j, l) for i in range(dims[0]) for j in range(dims[1]) for l in range(dims[2])]
    picked = [c for c in cells if rng.random() < frac] or [cells[0]]
    return build_tensor(dims, [(*c, float(rng.normal(3, 1))) for c in picked])


def random_factors(rng, dims_s, dims_t, L, K, scale=0.7):
    return FactorSet(scale * rng.standard_normal((dims_s[0], K)),
                     scale * rng.standard_normal((dims_s[1], K)),
                     scale * rng.standard_normal((dims_t[0], K)),
                     scale * rng.standard_normal((dims_t[1], K)),
                     scale * rng.standard_normal((L, K)))
