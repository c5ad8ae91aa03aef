"""Benchmark problem registry: meshes, supports, loads, budgets.

All problems share unit-size elements, E0 = 1, nu = 0.3, a 1e-9 modulus
floor, a 0.40 volume fraction, and unit point loads. 2-D presets use the
direct solver; 3-D presets use PCG with the drift-based preconditioner
reuse policy.

Problems
--------
cantilever    left edge clamped, downward unit load mid-height right edge
mbb           half-model: symmetry on the left edge (ux = 0), vertical
              roller at the bottom-right corner, load top-left
lbracket      bounding box with the upper-right 2/5 x 2/5 void masked
              passive; top edge of the vertical limb clamped; downward tip
              load at the right end of the horizontal limb
cantilever3d  x = 0 face clamped, downward unit load at the centre of the
              free end face
mbb3d         quarter-symmetric: ux = 0 on the x = 0 face, uz = 0 on the
              z = 0 face, uy = 0 along the bottom-right edge, load at the
              top corner on both symmetry planes
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import LinearSolveConfig, LoadCase, Material, Mesh

V_FRACTION = 0.40

#: preset -> (nx, ny, nz, iteration budget)
PRESETS: dict[str, tuple[int, int, int, int]] = {
    "fast": (60, 30, 0, 100),
    "long": (120, 60, 0, 300),
    "hard": (180, 90, 0, 300),
    "3d": (40, 20, 10, 300),
    "3d_smoke": (16, 8, 4, 60),  # reduced scale for smoke runs
}

PROBLEM_IDS = ("cantilever", "mbb", "lbracket", "cantilever3d", "mbb3d")

#: Void fraction of the L-bracket bounding box (per axis, from the far side).
LBRACKET_VOID = 2.0 / 5.0


@dataclass
class Problem:
    name: str
    preset: str
    mesh: Mesh
    load: LoadCase
    n_iters: int
    v_f: float = V_FRACTION
    material: Material = field(default_factory=Material)
    passive: np.ndarray | None = None
    solve: LinearSolveConfig = field(default_factory=LinearSolveConfig)


def _solve_config(mesh: Mesh) -> LinearSolveConfig:
    if mesh.is_3d:
        return LinearSolveConfig(mode="pcg")
    return LinearSolveConfig(mode="direct")


def _all_dofs_2d(mesh: Mesh, ix: int, iys) -> list[int]:
    out = []
    for iy in iys:
        n = mesh.node_id(ix, iy)
        out.extend((2 * n, 2 * n + 1))
    return out


def _cantilever(mesh: Mesh) -> LoadCase:
    fixed = _all_dofs_2d(mesh, 0, range(mesh.ny + 1))
    tip = mesh.dof(mesh.nx, mesh.ny // 2, comp=1)
    return LoadCase(np.array(fixed), ((tip, -1.0),))


def _mbb(mesh: Mesh) -> LoadCase:
    fixed = [2 * mesh.node_id(0, iy) for iy in range(mesh.ny + 1)]  # ux = 0
    fixed.append(mesh.dof(mesh.nx, 0, comp=1))  # roller
    load = mesh.dof(0, mesh.ny, comp=1)
    return LoadCase(np.array(fixed), ((load, -1.0),))


def _lbracket(mesh: Mesh) -> tuple[LoadCase, np.ndarray]:
    limb_x = round(mesh.nx * (1.0 - LBRACKET_VOID))  # void starts here
    limb_y = round(mesh.ny * (1.0 - LBRACKET_VOID))
    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny), indexing="ij")
    passive = ((i >= limb_x) & (j >= limb_y)).ravel()
    fixed = []
    for ix in range(limb_x + 1):
        n = mesh.node_id(ix, mesh.ny)
        fixed.extend((2 * n, 2 * n + 1))
    load = mesh.dof(mesh.nx, limb_y, comp=1)
    return LoadCase(np.array(fixed), ((load, -1.0),)), passive


def _cantilever3d(mesh: Mesh) -> LoadCase:
    fixed = []
    for iy in range(mesh.ny + 1):
        for iz in range(mesh.nz + 1):
            n = mesh.node_id(0, iy, iz)
            fixed.extend((3 * n, 3 * n + 1, 3 * n + 2))
    tip = mesh.dof(mesh.nx, mesh.ny // 2, mesh.nz // 2, comp=1)
    return LoadCase(np.array(fixed), ((tip, -1.0),))


def _mbb3d(mesh: Mesh) -> LoadCase:
    fixed = []
    for iy in range(mesh.ny + 1):  # symmetry plane x = 0: ux = 0
        for iz in range(mesh.nz + 1):
            fixed.append(3 * mesh.node_id(0, iy, iz))
    for ix in range(mesh.nx + 1):  # symmetry plane z = 0: uz = 0
        for iy in range(mesh.ny + 1):
            fixed.append(3 * mesh.node_id(ix, iy, 0) + 2)
    for iz in range(mesh.nz + 1):  # roller edge x = nx, y = 0: uy = 0
        fixed.append(3 * mesh.node_id(mesh.nx, 0, iz) + 1)
    load = mesh.dof(0, mesh.ny, 0, comp=1)
    return LoadCase(np.unique(np.array(fixed)), ((load, -1.0),))


def build_problem(problem_id: str, preset: str = "fast") -> Problem:
    """Instantiate a registered problem at a registered preset scale."""
    if problem_id not in PROBLEM_IDS:
        raise ValueError(f"unknown problem {problem_id!r}; have {PROBLEM_IDS}")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; have {tuple(PRESETS)}")
    nx, ny, nz, n_iters = PRESETS[preset]
    mesh = Mesh(nx, ny, nz)
    is_3d_problem = problem_id.endswith("3d")
    if is_3d_problem != mesh.is_3d:
        raise ValueError(f"problem {problem_id!r} needs a matching-dimension preset")
    passive = None
    if problem_id == "cantilever":
        load = _cantilever(mesh)
    elif problem_id == "mbb":
        load = _mbb(mesh)
    elif problem_id == "lbracket":
        load, passive = _lbracket(mesh)
    elif problem_id == "cantilever3d":
        load = _cantilever3d(mesh)
    else:
        load = _mbb3d(mesh)
    return Problem(
        name=problem_id,
        preset=preset,
        mesh=mesh,
        load=load,
        n_iters=n_iters,
        passive=passive,
        solve=_solve_config(mesh),
    )
