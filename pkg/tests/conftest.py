"""Shared fixtures and parameter grids."""
import numpy as np
import pytest

# canonical stress grid: 5 x 5 x 5 over (p, H, c_circ)
GRID_P = (0.1, 0.3, 0.5, 0.7, 0.9)
GRID_H = (0.1, 0.3, 0.5, 0.7, 0.9)
GRID_CC = (0.0, 0.25, 0.5, 0.75, 0.99)


def grid_triples():
    for p in GRID_P:
        for H in GRID_H:
            for cc in GRID_CC:
                yield p, H, cc


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
