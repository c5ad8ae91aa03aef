"""Shared fixtures: small hand-built problems for fast unit tests.

The registered presets start at 60x30; unit tests mostly want tiny meshes
(8x4, 5x5) where finite differences and brute-force oracles stay cheap, so
problems are assembled directly from the public building blocks here.
"""

import numpy as np
import pytest

from topoctl.fem import LinearSolveConfig, LoadCase, Material, Mesh
from topoctl.problems import Problem


def make_cantilever(nx: int, ny: int, n_iters: int = 40, v_f: float = 0.4,
                    mode: str = "direct") -> Problem:
    """Left edge clamped, downward unit load at mid-height of the right edge."""
    mesh = Mesh(nx, ny)
    fixed = []
    for iy in range(ny + 1):
        n = mesh.node_id(0, iy)
        fixed.extend((2 * n, 2 * n + 1))
    tip = mesh.dof(nx, ny // 2, comp=1)
    return Problem(
        name="cantilever",
        preset="unit-test",
        mesh=mesh,
        load=LoadCase(np.array(fixed), ((tip, -1.0),)),
        n_iters=n_iters,
        v_f=v_f,
        material=Material(),
        solve=LinearSolveConfig(mode=mode),
    )


@pytest.fixture
def tiny_cantilever() -> Problem:
    """8x4 direct-solve cantilever: the finite-difference workhorse."""
    return make_cantilever(8, 4)
