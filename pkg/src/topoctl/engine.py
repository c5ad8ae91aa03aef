"""Run engine: continuation main loop, best-snapshot tracking, fixed tail.

One iteration = (controller decision if due) -> filter -> project -> FEM
solve -> compliance + sensitivities -> chain rule -> OC update. The engine
keeps the best *valid* state seen (penalization mature, volume on target),
lets controllers restart from it, and finishes continuation runs with a
fixed sharpening tail from that snapshot so that every controller is scored
under the identical end protocol.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fields
from .agent import AgentConfig, AgentController
from .clients import make_client
from .controllers import (
    EXPLORATION_PARAMS,
    TAIL_ITERS,
    TAIL_PARAMS,
    Controller,
    ExpertController,
    FixedController,
    ScheduleOnlyController,
    SolverParams,
    TailOnlyController,
    ThreeFieldController,
)
from .fem import FemSystem, SolverAbort, youngs_modulus
from .oc import oc_step
from .problems import Problem, build_problem

#: A state is snapshot-eligible once penalization is mature and the
#: physical volume sits on target.
SNAPSHOT_MIN_P = 3.0
SNAPSHOT_VOLUME_TOL = 0.005

#: Design-seed noise: +/-0.5% multiplicative around the target fraction.
INIT_NOISE = 0.005


@dataclass
class RunConfig:
    """Everything a run needs beyond the problem geometry itself."""

    problem: str
    preset: str
    controller: str
    seed: int = 0
    n_iters: int | None = None  # None: the preset's budget
    client_kind: str = "mock"
    replay_log: str | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)
    tail_enabled: bool | None = None  # None: controller's default
    tail_iters: int = TAIL_ITERS

    def as_dict(self) -> dict:
        return {
            "problem": self.problem,
            "preset": self.preset,
            "controller": self.controller,
            "seed": self.seed,
            "n_iters": self.n_iters,
            "client_kind": self.client_kind,
            "replay_log": self.replay_log,
            "agent": self.agent.as_dict(),
            "tail_enabled": self.tail_enabled,
            "tail_iters": self.tail_iters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["agent"] = AgentConfig.from_dict(d.get("agent", {}))
        return cls(**d)


@dataclass
class Snapshot:
    """Best valid state: the raw design field and what it scored."""

    rho: np.ndarray
    iteration: int
    compliance: float
    params: SolverParams
    valid: bool = True


@dataclass
class RunState:
    """Mutable loop state; also the controllers' observation surface."""

    n_total: int
    v_f: float
    iteration: int = 0
    params: SolverParams = EXPLORATION_PARAMS
    compliance_history: list[float] = field(default_factory=list)
    grayness_history: list[float] = field(default_factory=list)
    checkerboard_history: list[float] = field(default_factory=list)
    volume_history: list[float] = field(default_factory=list)
    best_snapshot: Snapshot | None = None
    iters_since_best: int = 0
    stagnation_iters: int = 0
    restart_count: int = 0
    volume_infeasible_events: int = 0
    trace: list[dict] = field(default_factory=list)

    @property
    def current_compliance(self) -> float | None:
        return self.compliance_history[-1] if self.compliance_history else None

    @property
    def best_valid_compliance(self) -> float | None:
        return self.best_snapshot.compliance if self.best_snapshot else None


@dataclass
class RunSummary:
    problem: str
    preset: str
    controller: str
    seed: int
    n_iters: int
    v_f: float
    final_compliance: float
    final_grayness: float
    final_volume: float
    best_iteration: int | None
    best_compliance: float | None
    iterations_executed: int
    tail_rows: int
    restart_count: int
    call_count: int
    fallback_count: int
    volume_infeasible_events: int
    precond_rebuilds: int
    precond_reuses: int
    aborted: bool
    abort_reason: str
    wall_time_s: float
    config: dict
    trace: list[dict]

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def canonical(self) -> dict:
        """Determinism-comparable form: wall-clock stripped, rest intact."""
        d = self.as_dict()
        d.pop("wall_time_s")
        return d


@dataclass
class RunResult:
    summary: RunSummary
    rho: np.ndarray
    rho_phys: np.ndarray
    state: RunState
    controller: Controller
    system: FemSystem
    problem: Problem


def initialize_design(mesh, v_f: float, seed: int, passive=None) -> np.ndarray:
    """Near-uniform seeded start: v_f with +/-0.5% noise, mean renormalized.

    With a passive mask, masked elements start (and stay) at zero and the
    active elements are scaled so the total mean still equals v_f exactly.
    """
    rng = np.random.default_rng(seed)
    n = mesh.n_elements
    rho = v_f * (1.0 + rng.uniform(-INIT_NOISE, INIT_NOISE, size=n))
    if passive is not None:
        rho[passive] = 0.0
        active = ~passive
        rho[active] *= v_f * n / rho[active].sum()
    else:
        rho *= v_f / rho.mean()
    return np.clip(rho, 0.0, 1.0)


def make_controller(
    kind: str,
    n_total: int,
    agent_cfg: AgentConfig | None = None,
    client=None,
) -> Controller:
    if kind == "fixed":
        return FixedController()
    if kind == "three_field":
        return ThreeFieldController(n_total)
    if kind == "expert":
        return ExpertController(n_total)
    if kind == "schedule_only":
        return ScheduleOnlyController(n_total)
    if kind == "tail_only":
        return TailOnlyController()
    if kind == "llm":
        if client is None:
            raise ValueError("llm controller needs a completion client")
        return AgentController(client, agent_cfg or AgentConfig(), n_total)
    raise ValueError(f"unknown controller kind {kind!r}")


def _evaluate(system, problem, rho, params, cache):
    """Filter/project/solve and measure one design field."""
    kernel = cache.get(params.r_min)
    rho_bar, rho_phys = fields.physical_field(
        rho, kernel, params.beta, problem.passive
    )
    e = youngs_modulus(rho_phys, params.p, system.material)
    u = system.solve(e)
    c, dc_phys = system.compliance_and_sensitivity(u, rho_phys, params.p)
    return kernel, rho_bar, rho_phys, c, dc_phys


def _oc_update(problem, state, rho, kernel, rho_bar, dc_phys, params):
    dc = fields.chain_sensitivity(
        dc_phys, rho_bar, params.beta, kernel, problem.passive
    )
    ones = np.full(rho.size, 1.0 / rho.size)
    dv = fields.chain_sensitivity(
        ones, rho_bar, params.beta, kernel, problem.passive
    )

    def phys_volume(candidate: np.ndarray) -> float:
        _, cand_phys = fields.physical_field(
            candidate, kernel, params.beta, problem.passive
        )
        return fields.volume_fraction(cand_phys)

    result = oc_step(
        rho, dc, dv, problem.v_f, params.move, phys_volume, problem.passive
    )
    if result.volume_infeasible:
        state.volume_infeasible_events += 1
    return result.rho


def _trace_row(index, phase, c, g, cb, vol, params, restarted):
    return {
        "iteration": index,
        "phase": phase,
        "compliance": float(c),
        "grayness": float(g),
        "checkerboard": float(cb),
        "volume": float(vol),
        "p": float(params.p),
        "beta": float(params.beta),
        "r_min": float(params.r_min),
        "move": float(params.move),
        "restart": int(restarted),
    }


def run_main_loop(
    problem: Problem,
    system: FemSystem,
    controller: Controller,
    state: RunState,
    rho: np.ndarray,
    cache: fields.FilterCache,
) -> tuple[np.ndarray, np.ndarray, str]:
    """Execute up to n_total main iterations; returns (rho, rho_phys, abort).

    abort is "" on a clean finish, else the abort diagnostic; the trace
    holds whatever iterations completed.
    """
    rho_phys = rho
    for t in range(state.n_total):
        state.iteration = t
        restarted = False
        action = controller.decide(state)
        if action is not None:
            state.params = action.params
            if action.restart and state.best_snapshot is not None:
                rho = state.best_snapshot.rho.copy()
                state.restart_count += 1
                state.stagnation_iters = 0
                restarted = True
        params = state.params
        try:
            kernel, rho_bar, rho_phys, c, dc_phys = _evaluate(
                system, problem, rho, params, cache
            )
        except SolverAbort as err:
            return rho, rho_phys, f"{type(err).__name__}: {err}"
        g = fields.grayness(rho_phys)
        cb = fields.checkerboard_index(rho_phys, problem.mesh)
        vol = fields.volume_fraction(rho_phys)
        state.compliance_history.append(c)
        state.grayness_history.append(g)
        state.checkerboard_history.append(cb)
        state.volume_history.append(vol)
        state.trace.append(_trace_row(t, "main", c, g, cb, vol, params, restarted))
        valid = params.p >= SNAPSHOT_MIN_P and abs(vol - problem.v_f) <= SNAPSHOT_VOLUME_TOL
        if valid and (
            state.best_snapshot is None or c < state.best_snapshot.compliance
        ):
            state.best_snapshot = Snapshot(rho.copy(), t, c, params)
            state.iters_since_best = 0
            state.stagnation_iters = 0
        else:
            state.iters_since_best += 1
            state.stagnation_iters += 1
        try:
            rho = _oc_update(problem, state, rho, kernel, rho_bar, dc_phys, params)
        except SolverAbort as err:
            return rho, rho_phys, f"{type(err).__name__}: {err}"
    return rho, rho_phys, ""


def apply_tail(
    problem: Problem,
    system: FemSystem,
    snapshot: Snapshot | None,
    cache: fields.FilterCache,
    state: RunState,
    tail_iters: int = TAIL_ITERS,
) -> tuple[np.ndarray, np.ndarray, str]:
    """Fixed sharpening epilogue: tail_iters OC steps at the tail parameters.

    Starts from the best snapshot's raw design (uniform v_f if none was ever
    captured) with a fresh solver context, then evaluates the last iterate
    once more so the reported final compliance and grayness belong to the
    field the tail actually produced. Independent of which controller made
    the snapshot.
    """
    if snapshot is not None:
        rho = snapshot.rho.copy()
    else:
        rho = np.full(problem.mesh.n_elements, problem.v_f)
        if problem.passive is not None:
            rho[problem.passive] = 0.0
    system.reset_solver_state()
    params = TAIL_PARAMS
    state.params = params
    base = len(state.trace)
    rho_phys = rho
    for i in range(tail_iters):
        try:
            kernel, rho_bar, rho_phys, c, dc_phys = _evaluate(
                system, problem, rho, params, cache
            )
        except SolverAbort as err:
            return rho, rho_phys, f"{type(err).__name__}: {err}"
        g = fields.grayness(rho_phys)
        cb = fields.checkerboard_index(rho_phys, problem.mesh)
        vol = fields.volume_fraction(rho_phys)
        state.compliance_history.append(c)
        state.grayness_history.append(g)
        state.checkerboard_history.append(cb)
        state.volume_history.append(vol)
        state.trace.append(
            _trace_row(base + i, "tail", c, g, cb, vol, params, False)
        )
        try:
            rho = _oc_update(problem, state, rho, kernel, rho_bar, dc_phys, params)
        except SolverAbort as err:
            return rho, rho_phys, f"{type(err).__name__}: {err}"
    try:
        _, _, rho_phys, c, _ = _evaluate(system, problem, rho, params, cache)
    except SolverAbort as err:
        return rho, rho_phys, f"{type(err).__name__}: {err}"
    g = fields.grayness(rho_phys)
    cb = fields.checkerboard_index(rho_phys, problem.mesh)
    vol = fields.volume_fraction(rho_phys)
    state.compliance_history.append(c)
    state.grayness_history.append(g)
    state.checkerboard_history.append(cb)
    state.volume_history.append(vol)
    state.trace.append(
        _trace_row(base + tail_iters, "final", c, g, cb, vol, params, False)
    )
    return rho, rho_phys, ""


def execute_run(problem: Problem, cfg: RunConfig) -> RunResult:
    """Full benchmark run: main loop, optional tail, summary."""
    t0 = time.perf_counter()
    n_total = cfg.n_iters if cfg.n_iters is not None else problem.n_iters
    client = None
    if cfg.controller == "llm":
        client = make_client(cfg.client_kind, replay_log=cfg.replay_log)
    controller = make_controller(cfg.controller, n_total, cfg.agent, client)
    state = RunState(n_total=n_total, v_f=problem.v_f)
    rho = initialize_design(problem.mesh, problem.v_f, cfg.seed, problem.passive)
    system = FemSystem(problem.mesh, problem.material, problem.load, problem.solve)
    cache = fields.FilterCache(problem.mesh)

    rho, rho_phys, abort = run_main_loop(
        problem, system, controller, state, rho, cache
    )
    main_rows = len(state.trace)
    tail_on = cfg.tail_enabled if cfg.tail_enabled is not None else controller.uses_tail
    if tail_on and not abort:
        rho, rho_phys, abort = apply_tail(
            problem, system, state.best_snapshot, cache, state, cfg.tail_iters
        )
    wall = time.perf_counter() - t0

    final = state.trace[-1] if state.trace else None
    agent_records = getattr(controller, "records", [])
    summary = RunSummary(
        problem=cfg.problem,
        preset=cfg.preset,
        controller=cfg.controller,
        seed=cfg.seed,
        n_iters=n_total,
        v_f=problem.v_f,
        final_compliance=final["compliance"] if final else float("nan"),
        final_grayness=final["grayness"] if final else float("nan"),
        final_volume=final["volume"] if final else float("nan"),
        best_iteration=(
            state.best_snapshot.iteration if state.best_snapshot else None
        ),
        best_compliance=(
            state.best_snapshot.compliance if state.best_snapshot else None
        ),
        iterations_executed=main_rows,
        tail_rows=len(state.trace) - main_rows,
        restart_count=state.restart_count,
        call_count=len(agent_records),
        fallback_count=getattr(controller, "fallback_count", 0),
        volume_infeasible_events=state.volume_infeasible_events,
        precond_rebuilds=system.rebuild_count,
        precond_reuses=system.reuse_count,
        aborted=bool(abort),
        abort_reason=abort,
        wall_time_s=wall,
        config=cfg.as_dict(),
        trace=state.trace,
    )
    return RunResult(summary, rho, rho_phys, state, controller, system, problem)


def run_benchmark(cfg: RunConfig, out_dir=None) -> RunResult:
    """Build the registered problem, run it, optionally export artifacts."""
    problem = build_problem(cfg.problem, cfg.preset)
    result = execute_run(problem, cfg)
    if out_dir is not None:
        from .export import write_run_outputs

        write_run_outputs(out_dir, result)
    return result
