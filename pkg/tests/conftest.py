"""Shared fixtures: solved double-integrator relaxations are reused across modules."""
import numpy as np
import pytest

from brsynth.problem import load_problem, normalize
from brsynth.relax import assemble
from brsynth.sdpsolve import solve

_SOLVED = {}


def solved(name: str, k: int, mode: str | None = None):
    """(problem, program, solution) for a bundled problem, cached per session."""
    key = (name, k, mode)
    if key not in _SOLVED:
        p = load_problem(name)
        if mode is not None:
            p = p.replace(mode=mode)
        pn = normalize(p)
        prog = assemble(pn, k)
        _SOLVED[key] = (p, prog, solve(prog))
    return _SOLVED[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def oracle_volume(T: float = 1.0, n: int = 3000) -> float:
    """Area of {min_time <= T} by midpoint rule on a grid covering it."""
    from brsynth.sim import min_time
    h = 2.0 * T / n
    ax = -T + h * (np.arange(n) + 0.5)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    inside = min_time(np.column_stack([X1.ravel(), X2.ravel()])) <= T
    return float(inside.sum() * h * h)
