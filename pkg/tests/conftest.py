import math

import numpy as np
import pytest

from brctc import PosteriorGrid, is_feasible
from brctc.lattice import log_softmax

A, B = 1, 2


@pytest.fixture
def uniform_3x3():
    """T=3, V=2, every symbol at probability 1/3."""
    return PosteriorGrid.from_probs(np.full((3, 3), 1 / 3))


@pytest.fixture
def single_frame():
    return PosteriorGrid.from_probs([[0.4, 0.6]])


def random_lattices(seed, count, T_max=8, U_max=4, V_max=3, scale=1.5):
    """Seeded feasible (grid, labels, V) triples small enough to enumerate."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        V = int(rng.integers(1, V_max + 1))
        U = int(rng.integers(1, U_max + 1))
        labels = [int(k) for k in rng.integers(1, V + 1, size=U)]
        T = int(rng.integers(1, T_max + 1))
        if not is_feasible(T, labels):
            continue
        y = PosteriorGrid(log_softmax(rng.normal(size=(T, V + 1)) * scale))
        out.append((y, labels, V))
    return out


def log(x):
    return math.log(x) if x > 0 else -math.inf
