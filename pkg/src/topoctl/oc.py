"""Optimality-criteria design update with a volume-targeting bisection.

One OC step rescales each design density by the square root of its update
ratio B_e = (-dC/drho_e) / (lambda * dV/drho_e), clamps the result to the
move limit and to [0, 1], and bisects on the Lagrange multiplier lambda
until the *physical* volume fraction (filtered + projected field) hits the
target. When move/box limits make the target unreachable the closest
achievable volume is taken and flagged instead of failing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fem import SolverAbort

LAMBDA_LO = 1e-9
LAMBDA_HI = 1e9
BISECTION_TOL = 1e-6  # relative volume error
MAX_EXPANSIONS = 3
MAX_BISECTIONS = 200
DEAD_SENSITIVITY_REL = 1e-8  # below this fraction of max dV, treat as zero
LAMBDA_COLLAPSE_REL = 1e-9  # bisect until the bracket is this tight


class BisectionFailure(SolverAbort):
    """The multiplier search could not make sense of the sensitivities."""


@dataclass
class OcResult:
    rho: np.ndarray
    lam: float
    volume: float
    volume_infeasible: bool
    bisections: int


def oc_step(
    rho: np.ndarray,
    dc_drho: np.ndarray,
    dv_drho: np.ndarray,
    v_f: float,
    move: float,
    phys_volume: Callable[[np.ndarray], float],
    passive: np.ndarray | None = None,
) -> OcResult:
    """One OC update of the design field.

    dc_drho must be nonpositive and dv_drho strictly positive on active
    elements (both measured on the design field through the full chain).
    phys_volume maps a candidate design field to its physical volume
    fraction; the bisection drives it to v_f. Passive elements stay at 0
    and never enter the update.
    """
    rho = np.asarray(rho, dtype=float)
    dc = np.asarray(dc_drho, dtype=float)
    dv = np.asarray(dv_drho, dtype=float)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(dc)) and np.all(np.isfinite(dv))):
        raise BisectionFailure("non-finite input to OC update")
    active = ~passive if passive is not None else np.ones(rho.size, dtype=bool)
    if np.any(dv[active] < 0.0):
        raise BisectionFailure(
            "volume sensitivity must be nonnegative on active elements",
            min_dv=float(dv[active].min()),
        )
    numer = np.maximum(-dc, 0.0)
    # Sharp projection saturates: an element whose whole filter neighborhood
    # sits far from the projection threshold has volume (and compliance)
    # sensitivity many orders below the linear-solve residual, or exactly
    # zero.  Updating on such noise-scale ratios produces limit cycles, so
    # hold those elements in place; they re-enter the update the moment the
    # design puts real sensitivity back in their neighborhood.
    scale = float(dv[active].max()) if np.any(active) else 0.0
    live = dv > DEAD_SENSITIVITY_REL * scale

    def candidate(lam: float) -> np.ndarray:
        ratio = np.ones_like(rho)
        np.divide(numer, lam * dv, out=ratio, where=live)
        new = rho * np.sqrt(ratio)
        new = np.clip(new, rho - move, rho + move)
        new = np.clip(new, 0.0, 1.0)
        if passive is not None:
            new[passive] = 0.0
        return new

    def excess(lam: float) -> tuple[float, np.ndarray]:
        cand = candidate(lam)
        return phys_volume(cand) - v_f, cand

    lo, hi = LAMBDA_LO, LAMBDA_HI
    f_lo, cand_lo = excess(lo)
    f_hi, cand_hi = excess(hi)
    for _ in range(MAX_EXPANSIONS):
        if f_lo >= 0.0:
            break
        lo /= 10.0
        f_lo, cand_lo = excess(lo)
    for _ in range(MAX_EXPANSIONS):
        if f_hi <= 0.0:
            break
        hi *= 10.0
        f_hi, cand_hi = excess(hi)

    tol = BISECTION_TOL * max(v_f, np.finfo(float).tiny)
    if f_lo < 0.0 or f_hi > 0.0:
        # Even the extreme multipliers cannot cross the target: the move/box
        # limits bind. Take the closest achievable end; flag it when it still
        # misses the target beyond tolerance.
        if not (np.isfinite(f_lo) and np.isfinite(f_hi)):
            raise BisectionFailure("non-finite volume during bisection")
        if abs(f_lo) <= abs(f_hi):
            return OcResult(cand_lo, lo, f_lo + v_f, abs(f_lo) > tol, 0)
        return OcResult(cand_hi, hi, f_hi + v_f, abs(f_hi) > tol, 0)

    # Resolve the multiplier to a tight bracket rather than stopping at the
    # first volume-feasible point. Near-binary designs make the feasible
    # plateau in lambda wide; an early stop lands on a different plateau
    # point each iteration, and that jitter alone can lock the update into
    # a flip-flop cycle. The collapsed bracket varies continuously with the
    # design state.
    n = 0
    while hi > lo * (1.0 + LAMBDA_COLLAPSE_REL) and n < MAX_BISECTIONS:
        n += 1
        mid = np.sqrt(lo * hi)  # geometric midpoint: the bracket spans decades
        f_mid, _ = excess(mid)
        if not np.isfinite(f_mid):
            raise BisectionFailure("non-finite volume during bisection")
        if f_mid > 0.0:
            lo = mid
        else:
            hi = mid
    lam = float(np.sqrt(lo * hi))
    f_fin, cand_fin = excess(lam)
    return OcResult(cand_fin, lam, f_fin + v_f, abs(f_fin) > tol, n)
