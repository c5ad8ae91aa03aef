"""Three-field density pipeline and field diagnostics.

Design densities rho are smoothed by a linear-hat neighborhood filter into
rho_bar and sharpened by a smoothed Heaviside projection into the physical
field rho_tilde that the solver sees:

    rho_bar_e  = sum_i w_ei rho_i / sum_i w_ei,  w_ei = max(0, r - |x_e - x_i|)
    rho_tilde_e = [tanh(b*eta) + tanh(b*(rho_bar_e - eta))]
                  / [tanh(b*eta) + tanh(b*(1 - eta))]

Distances are measured between element centroids (unit-size elements), eta
is fixed at 0.5. Also provides the scalar diagnostics used by the
controllers: grayness, checkerboard index, and volume fraction.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import Mesh

ETA = 0.5


class FilterKernel:
    """Normalized linear-hat density filter on a regular grid.

    weights is the sparse (n_el, n_el) matrix of raw hat weights w_ei; the
    filter divides each row by its sum, so apply() maps [0, 1] fields to
    [0, 1] fields. chain() is the exact transpose of apply() for gradient
    backpropagation.
    """

    def __init__(self, mesh: Mesh, r_min: float):
        if r_min < 1.0:
            raise ValueError(f"filter radius {r_min} below element spacing")
        self.mesh = mesh
        self.r_min = float(r_min)
        self.weights = _hat_weights(mesh, self.r_min)
        self.row_sums = np.asarray(self.weights.sum(axis=1)).ravel()

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.weights @ rho) / self.row_sums

    def chain(self, grad_filtered: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. the filtered field back to the design field."""
        return self.weights.T @ (grad_filtered / self.row_sums)


def _hat_weights(mesh: Mesh, r_min: float) -> sp.csr_matrix:
    """Sparse w_ei = max(0, r_min - centroid distance), built per offset."""
    reach = int(np.ceil(r_min - 1.0))
    dims = mesh.shape
    nd = len(dims)
    grid = np.arange(mesh.n_elements).reshape(dims)
    rows, cols, vals = [], [], []
    offsets = np.stack(
        np.meshgrid(*(np.arange(-reach, reach + 1),) * nd, indexing="ij"), axis=-1
    ).reshape(-1, nd)
    for off in offsets:
        dist = float(np.sqrt(np.sum(off.astype(float) ** 2)))
        w = r_min - dist
        if w <= 0.0:
            continue
        src = [slice(max(0, -d), dims[a] - max(0, d)) for a, d in enumerate(off)]
        dst = [slice(max(0, d), dims[a] + min(0, d)) for a, d in enumerate(off)]
        rows.append(grid[tuple(dst)].ravel())
        cols.append(grid[tuple(src)].ravel())
        vals.append(np.full(rows[-1].size, w))
    n = mesh.n_elements
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


class FilterCache:
    """Caches kernels by radius; radii within 1e-12 reuse the same kernel."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self._kernels: dict[float, FilterKernel] = {}

    def get(self, r_min: float) -> FilterKernel:
        for r, kern in self._kernels.items():
            if abs(r - r_min) <= 1e-12:
                return kern
        kern = FilterKernel(self.mesh, r_min)
        self._kernels[float(r_min)] = kern
        return kern


def heaviside_project(rho_bar: np.ndarray, beta: float, eta: float = ETA) -> np.ndarray:
    """Smoothed Heaviside projection of the filtered field.

    Maps [0, 1] into [0, 1]; the clip only removes the ~1e-16 cancellation
    round-off the tanh difference leaves at the interval ends.
    """
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    out = (np.tanh(beta * eta) + np.tanh(beta * (rho_bar - eta))) / denom
    return np.clip(out, 0.0, 1.0)


def projection_derivative(
    rho_bar: np.ndarray, beta: float, eta: float = ETA
) -> np.ndarray:
    """d rho_tilde / d rho_bar, elementwise (strictly positive)."""
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta * (1.0 - np.tanh(beta * (rho_bar - eta)) ** 2) / denom


def grayness(rho_tilde: np.ndarray) -> float:
    """4/N * sum rho (1 - rho): 0 for binary fields, 1 at uniform 0.5."""
    rho = np.asarray(rho_tilde)
    return float(4.0 * np.mean(rho * (1.0 - rho)))


def volume_fraction(rho_tilde: np.ndarray) -> float:
    return float(np.mean(rho_tilde))


def checkerboard_index(rho_tilde: np.ndarray, mesh: Mesh) -> float:
    """Fraction of 2x2 element windows with a strictly alternating pattern.

    The field is thresholded at 0.5; a window counts when both diagonals
    agree and the two diagonals disagree (the two checker patterns). In 3-D
    the 2x2 windows are taken in every xy-plane slice. Meshes too small to
    hold a window return 0.
    """
    solid = np.asarray(rho_tilde).reshape(mesh.shape) > 0.5
    if mesh.nx < 2 or mesh.ny < 2:
        return 0.0
    if mesh.is_3d:
        a = solid[:-1, :-1, :]
        b = solid[1:, :-1, :]
        c = solid[:-1, 1:, :]
        d = solid[1:, 1:, :]
    else:
        a = solid[:-1, :-1]
        b = solid[1:, :-1]
        c = solid[:-1, 1:]
        d = solid[1:, 1:]
    alt = (a == d) & (b == c) & (a != b)
    return float(np.count_nonzero(alt) / alt.size)


def physical_field(
    rho: np.ndarray,
    kernel: FilterKernel,
    beta: float,
    passive: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(rho_bar, rho_tilde) for a design field; passive elements pinned to 0."""
    rho_bar = kernel.apply(rho)
    rho_tilde = heaviside_project(rho_bar, beta)
    if passive is not None:
        rho_tilde = rho_tilde.copy()
        rho_tilde[passive] = 0.0
    return rho_bar, rho_tilde


def chain_sensitivity(
    grad_phys: np.ndarray,
    rho_bar: np.ndarray,
    beta: float,
    kernel: FilterKernel,
    passive: np.ndarray | None = None,
) -> np.ndarray:
    """Pull d(objective)/d(rho_tilde) back to the design field.

    Applies the projection slope then the filter transpose. Passive
    elements are pinned, so their physical densities do not depend on the
    design field and their incoming gradient is dropped.
    """
    g = grad_phys * projection_derivative(rho_bar, beta)
    if passive is not None:
        g = g.copy()
        g[passive] = 0.0
    return kernel.chain(g)
