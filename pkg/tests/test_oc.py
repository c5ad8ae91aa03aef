"""Optimality-criteria update tests.

Covered here:

1. Trivial closed forms: a single element is pinned to the volume target by
   the bisection; an element whose update ratio is exactly 1 is a fixed
   point; an arbitrarily favorable sensitivity is stopped by the move limit.
2. Box/move envelope: output always within [max(0, rho - move),
   min(1, rho + move)] and inside [0, 1].
3. Volume behavior: achieved volume is nonincreasing in the multiplier;
   the bisection hits the target within tolerance when reachable, and
   returns the closest achievable volume flagged infeasible otherwise.
4. No-op conditions: uniform sensitivities at the current volume leave the
   field unchanged; passive elements never move off zero.
5. Numerically dead volume sensitivities (saturated projection
   neighborhoods) hold their elements in place instead of producing
   noise-ratio updates.
6. Input validation: negative volume sensitivities and non-finite inputs
   abort with diagnostics.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from topoctl.fem import SolverAbort
from topoctl.oc import BisectionFailure, OcResult, oc_step


def mean_volume(candidate: np.ndarray) -> float:
    """Identity pipeline: physical field == design field."""
    return float(np.mean(candidate))


class TestClosedForms:
    def test_single_element_pinned_to_target(self):
        # One unknown + volume constraint: the answer is the target,
        # whatever the sensitivities say.
        for dc in (-1.0, -7.3, -0.02):
            res = oc_step(np.array([0.5]), np.array([dc]), np.array([1.0]),
                          v_f=0.4, move=0.2, phys_volume=mean_volume)
            assert res.rho[0] == pytest.approx(0.4, abs=1e-6)
            assert not res.volume_infeasible
            # the multiplier lands where B = (-dc)/(lam dv) gives rho*sqrt(B)=0.4
            assert res.lam == pytest.approx(-dc * (0.5 / 0.4) ** 2, rel=1e-6)

    def test_unit_ratio_fixed_point(self):
        # All ratios identical and volume already on target: the bisection
        # settles at the multiplier where B = 1 and nothing moves.
        rho = np.full(8, 0.4)
        dc = np.full(8, -2.0)
        dv = np.ones(8)
        res = oc_step(rho, dc, dv, v_f=0.4, move=0.2, phys_volume=mean_volume)
        assert_allclose(res.rho, 0.4, atol=1e-6)
        assert res.lam == pytest.approx(2.0, rel=1e-6)

    def test_move_limit_clamps_favorable_element(self):
        # Element 0 has an enormous favorable sensitivity: it climbs exactly
        # one move limit. The other elements absorb the volume constraint.
        rho = np.array([0.5, 0.5, 0.5, 0.5])
        dc = np.array([-1e9, -1.0, -1.0, -1.0])
        dv = np.ones(4)
        res = oc_step(rho, dc, dv, v_f=0.5, move=0.1, phys_volume=mean_volume)
        assert res.rho[0] == pytest.approx(0.6, abs=1e-9)
        assert not res.volume_infeasible
        assert mean_volume(res.rho) == pytest.approx(0.5, abs=1e-6)


class TestEnvelope:
    @pytest.mark.parametrize("seed", range(5))
    def test_output_in_move_box(self, seed):
        rng = np.random.default_rng(seed)
        n = 50
        rho = rng.uniform(0.0, 1.0, n)
        dc = -rng.uniform(0.01, 10.0, n)
        dv = rng.uniform(0.5, 2.0, n)
        move = 0.15
        res = oc_step(rho, dc, dv, v_f=0.4, move=move, phys_volume=mean_volume)
        assert np.all(res.rho >= np.maximum(0.0, rho - move) - 1e-12)
        assert np.all(res.rho <= np.minimum(1.0, rho + move) + 1e-12)

    def test_volume_monotone_in_multiplier(self):
        rng = np.random.default_rng(17)
        n = 40
        rho = rng.uniform(0.1, 0.9, n)
        dc = -rng.uniform(0.1, 5.0, n)
        dv = rng.uniform(0.5, 2.0, n)
        move = 0.2

        def volume_at(lam):
            ratio = (-dc) / (lam * dv)
            new = np.clip(rho * np.sqrt(ratio), rho - move, rho + move)
            return float(np.clip(new, 0.0, 1.0).mean())

        lams = np.logspace(-3, 3, 25)
        vols = [volume_at(l) for l in lams]
        assert np.all(np.diff(vols) <= 1e-12)


class TestVolumeTargeting:
    @pytest.mark.parametrize("v_f", [0.35, 0.45, 0.6])
    def test_reachable_target_hit_within_tolerance(self, v_f):
        rng = np.random.default_rng(23)
        rho = np.full(60, 0.5)
        dc = -rng.uniform(0.2, 3.0, 60)
        dv = np.ones(60)
        res = oc_step(rho, dc, dv, v_f=v_f, move=0.2, phys_volume=mean_volume)
        assert res.volume == pytest.approx(v_f, abs=1e-6 * v_f + 1e-12)
        assert not res.volume_infeasible
        assert res.bisections > 0

    def test_unreachable_target_flagged_closest(self):
        # Move limit 0.05 from a 0.5 field cannot reach 0.2: the update
        # returns the lowest reachable volume (0.45) flagged infeasible.
        rho = np.full(10, 0.5)
        dc = -np.ones(10)
        dv = np.ones(10)
        res = oc_step(rho, dc, dv, v_f=0.2, move=0.05, phys_volume=mean_volume)
        assert res.volume == pytest.approx(0.45, abs=1e-9)
        assert res.volume_infeasible

    def test_current_volume_zero_variance_unchanged(self):
        rho = np.full(12, 0.4)
        res = oc_step(rho, -np.ones(12), np.ones(12), v_f=0.4, move=0.2,
                      phys_volume=mean_volume)
        assert_allclose(res.rho, rho, atol=1e-6)

    def test_result_shape(self):
        res = oc_step(np.array([0.5]), np.array([-1.0]), np.array([1.0]),
                      v_f=0.4, move=0.2, phys_volume=mean_volume)
        assert isinstance(res, OcResult)
        assert isinstance(res.lam, float)
        assert isinstance(res.bisections, int)


class TestPassiveAndDeadElements:
    def test_passive_elements_stay_zero(self):
        n = 20
        passive = np.zeros(n, dtype=bool)
        passive[:5] = True
        rho = np.full(n, 0.4)
        rho[passive] = 0.0
        dc = -np.ones(n)
        dv = np.ones(n)
        dv[passive] = 0.0  # chain drops passive sensitivities too
        res = oc_step(rho, dc, dv, v_f=0.3, move=0.2,
                      phys_volume=mean_volume, passive=passive)
        assert np.all(res.rho[passive] == 0.0)

    def test_dead_sensitivity_elements_held(self):
        # Elements whose volume sensitivity has underflowed (saturated
        # projection neighborhood) must not move: their ratio would be
        # noise. Live elements still satisfy the constraint.
        n = 10
        rho = np.full(n, 0.5)
        dc = -np.ones(n)
        dv = np.ones(n)
        dead = np.array([2, 7])
        dv[dead] = 0.0
        dc[dead] = 0.0  # dead dv implies dead dc through the same chain
        res = oc_step(rho, dc, dv, v_f=0.4, move=0.2, phys_volume=mean_volume)
        assert_allclose(res.rho[dead], 0.5, atol=1e-12)
        live = np.setdiff1d(np.arange(n), dead)
        assert np.all(res.rho[live] < 0.5)

    def test_relatively_dead_threshold(self):
        # A sensitivity 1e-9 of the max is below the dead threshold (1e-8
        # relative) and holds; 1e-6 of the max is live and moves.
        rho = np.full(4, 0.5)
        dc = np.array([-1.0, -1.0, -1e-9, -1e-6])
        dv = np.array([1.0, 1.0, 1e-9, 1e-6])
        res = oc_step(rho, dc, dv, v_f=0.4, move=0.2, phys_volume=mean_volume)
        assert res.rho[2] == pytest.approx(0.5, abs=1e-12)
        assert res.rho[3] != pytest.approx(0.5, abs=1e-6)


class TestValidation:
    def test_negative_volume_sensitivity_aborts(self):
        with pytest.raises(BisectionFailure):
            oc_step(np.array([0.5, 0.5]), np.array([-1.0, -1.0]),
                    np.array([1.0, -0.5]), v_f=0.4, move=0.2,
                    phys_volume=mean_volume)

    def test_negative_dv_on_passive_element_tolerated(self):
        passive = np.array([False, True])
        res = oc_step(np.array([0.5, 0.0]), np.array([-1.0, 0.0]),
                      np.array([1.0, -0.5]), v_f=0.2, move=0.2,
                      phys_volume=mean_volume, passive=passive)
        assert res.rho[1] == 0.0

    def test_non_finite_inputs_abort(self):
        good = np.array([0.5, 0.5])
        with pytest.raises(BisectionFailure):
            oc_step(np.array([0.5, np.nan]), -np.ones(2), np.ones(2),
                    v_f=0.4, move=0.2, phys_volume=mean_volume)
        with pytest.raises(BisectionFailure):
            oc_step(good, np.array([-1.0, -np.inf]), np.ones(2),
                    v_f=0.4, move=0.2, phys_volume=mean_volume)

    def test_failure_is_a_solver_abort(self):
        assert issubclass(BisectionFailure, SolverAbort)
