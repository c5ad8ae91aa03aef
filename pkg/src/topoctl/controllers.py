"""Continuation controllers for the penalization/projection/filter schedule.

A controller decides, per iteration, the four solver parameters

    p      SIMP penalization exponent
    beta   Heaviside projection sharpness
    r_min  filter radius
    move   OC move limit

plus an optional restart-from-best flag. Deterministic controllers are pure
functions of the iteration index (and run length where their schedule is
budget-fraction based); the LLM-driven controller lives in topoctl.agent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol

CONTROLLER_KINDS = (
    "fixed", "three_field", "expert", "schedule_only", "tail_only", "llm",
)

# Sanctioned parameter ranges (hard clamps applied by the safety rails).
P_RANGE = (1.0, 5.0)
BETA_RANGE = (1.0, 64.0)
RMIN_RANGE = (1.1, 4.0)
MOVE_RANGE = (0.03, 0.40)

#: Fixed-tail sharpening parameters and length appended after the main loop.
TAIL_ITERS = 40


@dataclass(frozen=True)
class SolverParams:
    """The four continuation parameters handed to the inner solver."""

    p: float
    beta: float
    r_min: float
    move: float

    def as_dict(self) -> dict[str, float]:
        return {
            "p": self.p, "beta": self.beta,
            "r_min": self.r_min, "move": self.move,
        }


TAIL_PARAMS = SolverParams(p=4.5, beta=32.0, r_min=1.20, move=0.05)
FIXED_PARAMS = SolverParams(p=3.0, beta=1.0, r_min=1.5, move=0.2)
EXPLORATION_PARAMS = SolverParams(p=1.0, beta=1.0, r_min=1.5, move=0.2)

#: Restart when compliance exceeds best-so-far by this relative margin.
RESTART_DEVIATION = 0.12


@dataclass(frozen=True)
class ControllerAction:
    params: SolverParams
    restart: bool = False
    note: str = ""


@dataclass(frozen=True)
class AdvisoryStage:
    """One row of the staged advisory schedule (budget-fraction indexed)."""

    name: str
    budget_lo: float
    budget_hi: float
    p_lo: float
    p_hi: float
    beta_lo: float
    beta_hi: float
    r_min: float
    move: float


ADVISORY_STAGES = (
    AdvisoryStage("exploration", 0.00, 0.08, 1.0, 2.0, 1.0, 1.0, 1.50, 0.20),
    AdvisoryStage("penalization", 0.08, 0.50, 2.0, 4.5, 1.0, 4.0, 1.35, 0.15),
    AdvisoryStage("sharpening", 0.50, 0.75, 4.5, 4.5, 4.0, 16.0, 1.25, 0.08),
    AdvisoryStage("polish", 0.75, 1.00, 4.5, 4.5, 32.0, 32.0, 1.20, 0.05),
)


def advisory_stage(budget_fraction: float) -> tuple[int, AdvisoryStage]:
    f = max(0.0, budget_fraction)
    for i, stage in enumerate(ADVISORY_STAGES):
        if f < stage.budget_hi:
            return i, stage
    return len(ADVISORY_STAGES) - 1, ADVISORY_STAGES[-1]


def _late_stage_r_min(iteration: int, n_total: int) -> float:
    """Linear 1.50 -> 1.20 tightening over the final quarter of the run."""
    start = 0.75 * n_total
    if iteration < start:
        return 1.5
    span = max(n_total - start, 1.0)
    r = 1.5 - 0.3 * (iteration - start) / span
    return max(r, 1.2)


def _doubling_beta(iteration: int, start_iter: int, every: int = 10) -> float:
    """2 at start_iter, doubling every `every` iterations, capped at 64."""
    if iteration < start_iter:
        return 1.0
    return float(min(64.0, 2.0 ** (1 + (iteration - start_iter) // every)))


def decide_fixed(iteration: int) -> ControllerAction:
    """Constant textbook parameters; no continuation, no restarts."""
    return ControllerAction(FIXED_PARAMS)


def decide_three_field(iteration: int, n_total: int = 300) -> ControllerAction:
    """Classic continuation: linear p ramp, stepped beta doubling, late r_min."""
    p = min(4.5, 1.0 + 3.5 * iteration / 30.0)
    beta = _doubling_beta(iteration, start_iter=30)
    return ControllerAction(SolverParams(
        p=p, beta=beta, r_min=_late_stage_r_min(iteration, n_total), move=0.2,
    ))


def expert_p(iteration: int) -> float:
    return min(4.5, 1.0 + 0.75 * (iteration // 10))


def decide_expert(
    iteration: int,
    current_c: float | None = None,
    best_valid_c: float | None = None,
    n_total: int = 300,
) -> ControllerAction:
    """Practitioner-style staircase with a restart-on-spike rule.

    p climbs 0.75 per 10 iterations; beta starts doubling only once p has
    reached 3.0; restart fires when compliance exceeds the best valid value
    by more than 12% (and a best snapshot exists).
    """
    p = expert_p(iteration)
    beta = _doubling_beta(iteration, start_iter=30) if p >= 3.0 else 1.0
    restart = (
        current_c is not None
        and best_valid_c is not None
        and current_c > (1.0 + RESTART_DEVIATION) * best_valid_c
    )
    return ControllerAction(
        SolverParams(
            p=p, beta=beta, r_min=_late_stage_r_min(iteration, n_total), move=0.2,
        ),
        restart=restart,
        note="restart: compliance spike" if restart else "",
    )


def decide_schedule_only(iteration: int, n_total: int) -> ControllerAction:
    """Open-loop replay of the staged advisory schedule by budget fraction.

    p interpolates linearly across each stage's range; beta doubles at
    evenly spaced sub-intervals inside stages 2-3 so the stage-exit values
    are 4 and 16; r_min and move step to the stage targets on entry.
    """
    f = iteration / n_total
    idx, stage = advisory_stage(f)
    width = stage.budget_hi - stage.budget_lo
    u = min(max((f - stage.budget_lo) / width, 0.0), 1.0)
    p = stage.p_lo + (stage.p_hi - stage.p_lo) * u
    if idx in (1, 2):  # doubling ladder: lo, 2*lo, 4*lo across thirds
        beta = stage.beta_lo * 2.0 ** min(int(u * 3.0), 2)
    else:
        beta = stage.beta_hi
    return ControllerAction(SolverParams(
        p=p, beta=beta, r_min=stage.r_min, move=stage.move,
    ))


def decide_tail_only(iteration: int) -> ControllerAction:
    """Flat exploration parameters; all sharpening is left to the tail."""
    return ControllerAction(EXPLORATION_PARAMS)


class RunView(Protocol):
    """What a controller may observe about the run (duck-typed)."""

    iteration: int
    n_total: int

    @property
    def current_compliance(self) -> float | None: ...
    @property
    def best_valid_compliance(self) -> float | None: ...


class Controller:
    """Base controller: decide() may return None to hold the last action."""

    kind: str = "base"
    uses_tail: bool = True

    def decide(self, state) -> ControllerAction | None:
        raise NotImplementedError


class FixedController(Controller):
    kind = "fixed"
    uses_tail = False

    def decide(self, state) -> ControllerAction:
        return decide_fixed(state.iteration)


class ThreeFieldController(Controller):
    kind = "three_field"

    def __init__(self, n_total: int = 300):
        self.n_total = n_total

    def decide(self, state) -> ControllerAction:
        return decide_three_field(state.iteration, self.n_total)


class ExpertController(Controller):
    kind = "expert"

    def __init__(self, n_total: int = 300):
        self.n_total = n_total

    def decide(self, state) -> ControllerAction:
        return decide_expert(
            state.iteration,
            state.current_compliance,
            state.best_valid_compliance,
            self.n_total,
        )


class ScheduleOnlyController(Controller):
    kind = "schedule_only"

    def __init__(self, n_total: int):
        self.n_total = n_total

    def decide(self, state) -> ControllerAction:
        return decide_schedule_only(state.iteration, self.n_total)


class TailOnlyController(Controller):
    kind = "tail_only"

    def decide(self, state) -> ControllerAction:
        return decide_tail_only(state.iteration)


def clamp_params(params: SolverParams) -> SolverParams:
    """Clamp all four parameters into their sanctioned ranges."""
    return replace(
        params,
        p=min(max(params.p, P_RANGE[0]), P_RANGE[1]),
        beta=min(max(params.beta, BETA_RANGE[0]), BETA_RANGE[1]),
        r_min=min(max(params.r_min, RMIN_RANGE[0]), RMIN_RANGE[1]),
        move=min(max(params.move, MOVE_RANGE[0]), MOVE_RANGE[1]),
    )
