"""Finite-element kernel for regular density grids.

Bilinear quadrilaterals (plane stress) on 2-D grids and trilinear hexahedra
on 3-D grids, both with unit element size. Assembles the global stiffness
from a per-element Young's modulus vector, eliminates fixed dofs, and solves
the reduced SPD system either directly (sparse LU) or with preconditioned
conjugate gradients. The PCG path reuses its preconditioner between solves
until the element stiffness has drifted past a relative threshold.

Node numbering
--------------
2-D: node(ix, iy) = ix*(ny+1) + iy, dofs (2n, 2n+1) = (ux, uy).
3-D: node(ix, iy, iz) = iz*(nx+1)*(ny+1) + ix*(ny+1) + iy,
     dofs (3n, 3n+1, 3n+2) = (ux, uy, uz).
Elements are indexed in C order of the (nx, ny[, nz]) grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverAbort(Exception):
    """Base class for unrecoverable solver failures."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class SingularSystem(SolverAbort):
    """The constrained stiffness matrix is singular or numerically broken."""


class CgNoConvergence(SolverAbort):
    """PCG failed to reach the requested residual within the iteration cap."""


@dataclass(frozen=True)
class Mesh:
    """Regular grid of unit-sized elements; nz == 0 means a 2-D grid."""

    nx: int
    ny: int
    nz: int = 0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.nz < 0:
            raise ValueError(f"bad mesh dims ({self.nx}, {self.ny}, {self.nz})")

    @property
    def is_3d(self) -> bool:
        return self.nz > 0

    @property
    def ndim(self) -> int:
        return 3 if self.is_3d else 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx, self.ny, self.nz) if self.is_3d else (self.nx, self.ny)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny * max(self.nz, 1)

    @property
    def n_nodes(self) -> int:
        n = (self.nx + 1) * (self.ny + 1)
        return n * (self.nz + 1) if self.is_3d else n

    @property
    def n_dofs(self) -> int:
        return self.ndim * self.n_nodes

    def node_id(self, ix: int, iy: int, iz: int = 0) -> int:
        if self.is_3d:
            return iz * (self.nx + 1) * (self.ny + 1) + ix * (self.ny + 1) + iy
        return ix * (self.ny + 1) + iy

    def dof(self, ix: int, iy: int, iz: int = 0, comp: int = 0) -> int:
        return self.ndim * self.node_id(ix, iy, iz) + comp

    def centroids(self) -> np.ndarray:
        """(n_elements, ndim) element centroid coordinates in C element order."""
        if self.is_3d:
            i, j, k = np.meshgrid(
                np.arange(self.nx), np.arange(self.ny), np.arange(self.nz),
                indexing="ij",
            )
            pts = np.stack([i, j, k], axis=-1).reshape(-1, 3)
        else:
            i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
            pts = np.stack([i, j], axis=-1).reshape(-1, 2)
        return pts + 0.5


@dataclass(frozen=True)
class Material:
    """Isotropic material with SIMP modulus floor e_min."""

    e0: float = 1.0
    e_min: float = 1e-9
    nu: float = 0.3


@dataclass(frozen=True)
class LoadCase:
    """Dirichlet dofs (fixed to zero) and point loads on free dofs."""

    fixed_dofs: np.ndarray
    forces: tuple[tuple[int, float], ...]

    def force_vector(self, n_dofs: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for dof, val in self.forces:
            f[dof] += val
        return f


@dataclass
class LinearSolveConfig:
    """How the reduced system is solved.

    mode: "direct" (sparse LU) or "pcg".
    precond: "jacobi" (default) or "amg" (optional two-level smoothed
    aggregation; requires the pyamg extra). The preconditioner is rebuilt
    when any element modulus has drifted more than rebuild_threshold
    (relative) since the stiffness the current preconditioner was built on.
    """

    mode: str = "direct"
    cg_tolerance: float = 1e-8
    cg_max_iters: int = 10000
    precond: str = "jacobi"
    rebuild_threshold: float = 0.15


def element_stiffness_2d(material: Material) -> np.ndarray:
    """Plane-stress Q4 stiffness for a unit square at unit modulus.

    Node order is counterclockwise from the bottom-left corner, two dofs
    (ux, uy) per node. Closed-form entries for the bilinear quadrilateral.
    """
    nu = material.nu
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return 1.0 / (1 - nu**2) * k[idx]


# H8 corner offsets: bottom face counterclockwise, then top face.
_H8_CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
])


def element_stiffness_3d(material: Material) -> np.ndarray:
    """Trilinear H8 stiffness for a unit cube at unit modulus.

    2-point Gauss quadrature per axis; node order matches _H8_CORNERS with
    three dofs (ux, uy, uz) per node.
    """
    nu = material.nu
    lam = nu / ((1 + nu) * (1 - 2 * nu))
    mu = 1.0 / (2 * (1 + nu))
    c = np.zeros((6, 6))
    c[:3, :3] = lam
    c[np.diag_indices(3)] = lam + 2 * mu
    c[3, 3] = c[4, 4] = c[5, 5] = mu
    signs = 2.0 * _H8_CORNERS - 1.0  # natural-coordinate corner signs
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    ke = np.zeros((24, 24))
    for xi in gp:
        for eta in gp:
            for zeta in gp:
                g = np.array([xi, eta, zeta])
                # dN/dnatural, then chain to physical (unit cube: factor 2)
                dn = np.zeros((8, 3))
                for a in range(3):
                    others = [b for b in range(3) if b != a]
                    dn[:, a] = (
                        0.125 * signs[:, a]
                        * (1 + g[others[0]] * signs[:, others[0]])
                        * (1 + g[others[1]] * signs[:, others[1]])
                    ) * 2.0
                b = np.zeros((6, 24))
                b[0, 0::3] = dn[:, 0]
                b[1, 1::3] = dn[:, 1]
                b[2, 2::3] = dn[:, 2]
                b[3, 0::3] = dn[:, 1]
                b[3, 1::3] = dn[:, 0]
                b[4, 1::3] = dn[:, 2]
                b[4, 2::3] = dn[:, 1]
                b[5, 0::3] = dn[:, 2]
                b[5, 2::3] = dn[:, 0]
                ke += 0.125 * b.T @ c @ b  # detJ = 1/8, unit weights
    return ke


def element_stiffness(material: Material, ndim: int) -> np.ndarray:
    if ndim == 2:
        return element_stiffness_2d(material)
    if ndim == 3:
        return element_stiffness_3d(material)
    raise ValueError(f"unsupported dimension {ndim}")


def element_dof_map(mesh: Mesh) -> np.ndarray:
    """(n_elements, dofs_per_element) global dof indices, C element order."""
    if mesh.is_3d:
        i, j, k = np.meshgrid(
            np.arange(mesh.nx), np.arange(mesh.ny), np.arange(mesh.nz),
            indexing="ij",
        )
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        plane = (mesh.nx + 1) * (mesh.ny + 1)
        nodes = np.empty((mesh.n_elements, 8), dtype=np.int64)
        for a, (dx, dy, dz) in enumerate(_H8_CORNERS):
            nodes[:, a] = (k + dz) * plane + (i + dx) * (mesh.ny + 1) + (j + dy)
        dofs = np.empty((mesh.n_elements, 24), dtype=np.int64)
        for c in range(3):
            dofs[:, c::3] = 3 * nodes + c
        return dofs
    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    n1 = i * (mesh.ny + 1) + j          # bottom-left
    n2 = (i + 1) * (mesh.ny + 1) + j    # bottom-right
    nodes = np.stack([n1, n2, n2 + 1, n1 + 1], axis=1)  # ccw from bottom-left
    dofs = np.empty((mesh.n_elements, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return dofs


def youngs_modulus(rho_phys: np.ndarray, p: float, material: Material) -> np.ndarray:
    """SIMP interpolation E = e_min + rho^p (e0 - e_min)."""
    return material.e_min + rho_phys**p * (material.e0 - material.e_min)


def maybe_rebuild_preconditioner(
    prev_e: np.ndarray | None, new_e: np.ndarray, threshold: float
) -> bool:
    """True when the modulus drift since the last rebuild exceeds threshold.

    prev_e is the element modulus vector the current preconditioner was
    built on; None (no preconditioner yet) always rebuilds.
    """
    if prev_e is None:
        return True
    return bool(np.max(np.abs(new_e - prev_e) / prev_e) > threshold)


class FemSystem:
    """Assembled problem: mesh + material + loads + solve strategy.

    Holds the element stiffness, dof map, reduced-system index set, and —
    for the PCG path — the preconditioner state (last rebuild modulus,
    rebuild/reuse counters, warm-start vector).
    """

    def __init__(
        self,
        mesh: Mesh,
        material: Material,
        load: LoadCase,
        config: LinearSolveConfig | None = None,
    ):
        self.mesh = mesh
        self.material = material
        self.load = load
        self.config = config or LinearSolveConfig()
        self.ke = element_stiffness(material, mesh.ndim)
        self.edof = element_dof_map(mesh)
        n = mesh.n_dofs
        fixed = np.unique(np.asarray(load.fixed_dofs, dtype=np.int64))
        if fixed.size and (fixed.min() < 0 or fixed.max() >= n):
            raise ValueError("fixed dof out of range")
        mask = np.ones(n, dtype=bool)
        mask[fixed] = False
        self.free = np.flatnonzero(mask)
        self.fixed = fixed
        self._full_to_free = -np.ones(n, dtype=np.int64)
        self._full_to_free[self.free] = np.arange(self.free.size)
        self.f_full = load.force_vector(n)
        if np.any(self.f_full[fixed] != 0.0):
            raise ValueError("point load applied to a fixed dof")
        self.f_free = self.f_full[self.free]
        # sparse pattern: row/col indices for the reduced COO assembly
        nd = self.edof.shape[1]
        rows = np.repeat(self.edof, nd, axis=1).ravel()
        cols = np.tile(self.edof, (1, nd)).ravel()
        rr = self._full_to_free[rows]
        cc = self._full_to_free[cols]
        self._keep = (rr >= 0) & (cc >= 0)
        self._rows_free = rr[self._keep]
        self._cols_free = cc[self._keep]
        self.reset_solver_state()

    def reset_solver_state(self) -> None:
        """Drop preconditioner, counters, and warm start (fresh context)."""
        self._precond = None
        self._precond_e = None
        self.rebuild_count = 0
        self.reuse_count = 0
        self._warm = None

    def assemble(self, e_per_element: np.ndarray) -> sp.csc_matrix:
        """Reduced (free-dof) stiffness for the given element moduli."""
        sk = (e_per_element[:, None] * self.ke.ravel()[None, :]).ravel()
        k = sp.coo_matrix(
            (sk[self._keep], (self._rows_free, self._cols_free)),
            shape=(self.free.size, self.free.size),
        ).tocsc()
        return k

    def _preconditioner(self, k: sp.csc_matrix, e: np.ndarray):
        if maybe_rebuild_preconditioner(
            self._precond_e, e, self.config.rebuild_threshold
        ):
            if self.config.precond == "amg":
                import pyamg

                ml = pyamg.smoothed_aggregation_solver(k.tocsr(), max_levels=2)
                self._precond = ml.aspreconditioner(cycle="V")
            else:
                d = k.diagonal()
                if np.any(d <= 0):
                    raise SingularSystem(
                        "non-positive diagonal in reduced stiffness",
                        min_diag=float(d.min()),
                    )
                inv = 1.0 / d
                self._precond = spla.LinearOperator(
                    k.shape, matvec=lambda x, inv=inv: inv * x
                )
            self._precond_e = e.copy()
            self.rebuild_count += 1
        else:
            self.reuse_count += 1
        return self._precond

    def solve(self, e_per_element: np.ndarray) -> np.ndarray:
        """Displacements (full-length vector, zeros on fixed dofs).

        Raises SingularSystem / CgNoConvergence on failure. The relative
        residual of the reduced system is <= cg_tolerance in pcg mode and
        machine-level for the direct path.
        """
        e = np.asarray(e_per_element, dtype=float)
        if e.shape != (self.mesh.n_elements,):
            raise ValueError("modulus vector has wrong length")
        if not np.all(np.isfinite(e)) or np.any(e <= 0):
            raise SingularSystem("element moduli must be positive and finite")
        k = self.assemble(e)
        if self.config.mode == "direct":
            u_free = self._solve_direct(k)
        elif self.config.mode == "pcg":
            u_free = self._solve_pcg(k, e)
        else:
            raise ValueError(f"unknown solve mode {self.config.mode!r}")
        u = np.zeros(self.mesh.n_dofs)
        u[self.free] = u_free
        return u

    def _solve_direct(self, k: sp.csc_matrix) -> np.ndarray:
        try:
            lu = spla.splu(k)
            u = lu.solve(self.f_free)
        except RuntimeError as err:  # raised by SuperLU on exact singularity
            raise SingularSystem(f"sparse LU failed: {err}") from err
        if not np.all(np.isfinite(u)):
            raise SingularSystem("direct solve produced non-finite displacements")
        fnorm = np.linalg.norm(self.f_free)
        if fnorm > 0:
            res = np.linalg.norm(k @ u - self.f_free) / fnorm
            if res > 1e-6:
                raise SingularSystem(
                    "direct solve residual too large", residual=float(res)
                )
        return u

    def _solve_pcg(self, k: sp.csc_matrix, e: np.ndarray) -> np.ndarray:
        m = self._preconditioner(k, e)
        x0 = self._warm if self._warm is not None else None
        u, info = spla.cg(
            k,
            self.f_free,
            x0=x0,
            rtol=self.config.cg_tolerance,
            atol=0.0,
            maxiter=self.config.cg_max_iters,
            M=m,
        )
        if info != 0:
            raise CgNoConvergence(
                "PCG did not converge", info=int(info),
                max_iters=self.config.cg_max_iters,
            )
        self._warm = u.copy()
        return u

    def compliance_and_sensitivity(
        self, u: np.ndarray, rho_phys: np.ndarray, p: float
    ) -> tuple[float, np.ndarray]:
        """Compliance C = U^T K U and dC/drho_phys (nonpositive).

        dC/drho_e = -p rho_e^(p-1) (e0 - e_min) u_e^T k0 u_e.
        """
        ue = u[self.edof]
        ce = np.einsum("ij,jk,ik->i", ue, self.ke, ue)
        ce = np.maximum(ce, 0.0)  # clip quadrature round-off on rigid elements
        e = youngs_modulus(rho_phys, p, self.material)
        c = float(np.dot(e, ce))
        dc = -p * rho_phys ** (p - 1) * (self.material.e0 - self.material.e_min) * ce
        return c, dc
