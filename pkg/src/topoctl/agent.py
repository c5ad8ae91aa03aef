"""LLM-driven continuation controller with direct numeric control.

Every cfg.call_every iterations the agent serializes a compact numeric
observation of the run, sends it with a fixed instruction prompt to a
completion client, parses the first JSON object out of the reply, and runs
it through hard safety rails before the parameters reach the solver. Any
client failure or malformed reply degrades to a deterministic staged
fallback schedule. Every exchange is recorded for audit and byte-exact
replay.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields, replace

from .clients import CompletionClient
from .controllers import (
    EXPLORATION_PARAMS,
    Controller,
    ControllerAction,
    SolverParams,
    clamp_params,
)

#: Hard cap applied to beta while grayness sits above the gate threshold.
GATE_BETA_CAP = 8.0
#: Maximum tokens the model may spend on one reply.
OUTPUT_TOKEN_CAP = 200


class MalformedResponse(Exception):
    """The reply carried no usable action object."""


@dataclass(frozen=True)
class AgentConfig:
    """Tunable constants of the agent loop (meta-optimizable)."""

    grayness_gate: float = 0.20
    call_every: int = 5
    penal_ramp_iters: int = 12
    beta_double_every: int = 10
    phase_min_iters_penalization: int = 22
    phase_min_iters_sharpening: int = 16

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Observation:
    """Numeric snapshot of the run at a decision point (all fields finite)."""

    iteration: int
    budget_fraction: float
    iters_since_best: int
    compliance: float
    best_compliance: float
    rel_deviation: float
    rel_change_1: float
    rel_change_5: float
    objective_slope: float
    grayness: float
    grayness_slope: float
    checkerboard: float
    volume_fraction: float
    p: float
    beta: float
    r_min: float
    move: float
    best_snapshot_valid: bool


def _rel_change(history, steps: int) -> float:
    """(C_t - C_{t-steps}) / C_t, substituting the earliest entry if short."""
    c = history[-1]
    prev = history[-1 - steps] if len(history) > steps else history[0]
    if c == 0.0:
        return 0.0
    return (c - prev) / c


def grayness_slope(compliance_history, stagnation_iters: int) -> float:
    """-|five-step relative compliance change|, zeroed after 3 stagnant iters.

    A proxy for how fast sharpening may proceed: large recent objective
    movement (relative to current compliance) means the design is still
    reorganizing; once progress has stalled for 3+ iterations the slope
    reports 0.
    """
    rc5 = _rel_change(compliance_history, 5)
    return -abs(rc5) if stagnation_iters < 3 else 0.0


def build_observation(state) -> Observation:
    """Observation from a run state with at least one completed iteration.

    Expects the duck-typed attributes: iteration, n_total,
    compliance_history, grayness_history, checkerboard_history,
    volume_history, params, best_snapshot (or None), iters_since_best,
    stagnation_iters.
    """
    hist = state.compliance_history
    if not hist:
        raise ValueError("observation requires at least one completed iteration")
    c = float(hist[-1])
    snap = state.best_snapshot
    best = float(snap.compliance) if snap is not None else c
    rel_dev = (c - best) / best if snap is not None and best != 0.0 else 0.0
    rc5 = _rel_change(hist, 5)
    return Observation(
        iteration=state.iteration,
        budget_fraction=state.iteration / state.n_total,
        iters_since_best=(
            state.iters_since_best if snap is not None else state.iteration
        ),
        compliance=c,
        best_compliance=best,
        rel_deviation=rel_dev,
        rel_change_1=_rel_change(hist, 1),
        rel_change_5=rc5,
        objective_slope=rc5 / 5.0,
        grayness=float(state.grayness_history[-1]),
        grayness_slope=grayness_slope(hist, state.stagnation_iters),
        checkerboard=float(state.checkerboard_history[-1]),
        volume_fraction=float(state.volume_history[-1]),
        p=state.params.p,
        beta=state.params.beta,
        r_min=state.params.r_min,
        move=state.params.move,
        best_snapshot_valid=snap is not None,
    )


SYSTEM_TEXT = """\
You adjust four continuation parameters for a density-based structural
optimizer. You are consulted every few iterations; your numbers are applied
directly (after hard clamping) until the next consultation.

Reply with a single JSON object and nothing else, for example:
{"p": 3.0, "beta": 4.0, "rmin": 1.35, "move": 0.15, "restart": false,
 "note": "short rationale"}

Hard bounds (requests outside these are clamped):
- p in [1.0, 5.0]: material interpolation exponent, raise it gradually
- beta in [1.0, 64.0]: projection sharpness, doubling steps work well
- rmin in [1.1, 4.0]: filter radius, may hold or shrink but never grow back
- move in [0.03, 0.40]: per-iteration density change cap
- restart: true reloads the best valid design so far (ignored if none exists)

Staged targets by budget fraction f (share of the run already spent):
  f < 0.08 : explore    p 1.0->2.0, beta 1,     rmin 1.50, move 0.20
  f < 0.50 : penalize   p 2.0->4.5, beta 1->4,  rmin 1.35, move 0.15
  f < 0.75 : sharpen    p 4.5,      beta 4->16, rmin 1.25, move 0.08
  f >= 0.75: polish     p 4.5,      beta 32,    rmin 1.20, move 0.05

Timing rules for beta:
- keep beta at 1 during exploration (f < 0.08); raise p before beta
- double beta at most once per decision; save beta = 32 for f >= 0.75
- if compliance is still moving fast, hold beta one more decision
- advisory: keep beta below 16 while grayness is above 0.20

The user message is the current state: compliance C with its best valid
value and relative changes over 1 and 5 iterations, a grayness measure in
[0, 1] (0 = crisp black/white design), a checkerboard score, the volume
fraction, and the parameters currently in force. Lower compliance is
better. If compliance sits more than 12% above the best valid value,
restarting from the best design usually pays off.
"""


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    token_estimate: int


def estimate_tokens(text: str) -> int:
    """Cheap length-based token estimate (~4 characters per token)."""
    return max(1, round(len(text) / 4))


def render_prompt(obs: Observation, cfg: AgentConfig) -> PromptBundle:
    """Deterministic prompt bytes for an observation.

    The system text is fixed (the configurable gate threshold is
    deliberately not disclosed; the advisory numbers are the static staged
    schedule). The user text is the observation as JSON in declaration
    order.
    """
    user = json.dumps(asdict(obs))
    return PromptBundle(
        system_text=SYSTEM_TEXT,
        user_text=user,
        token_estimate=estimate_tokens(SYSTEM_TEXT) + estimate_tokens(user),
    )


def extract_first_object(text: str) -> dict:
    """First balanced, parseable top-level JSON object in the text."""
    depth = 0
    start = None
    in_str = False
    esc = False
    for i, ch in enumerate(text):
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                try:
                    obj = json.loads(text[start : i + 1])
                except json.JSONDecodeError:
                    start = None
                    continue
                if isinstance(obj, dict):
                    return obj
                start = None
    raise MalformedResponse("no JSON object found in response")


_NUMERIC_KEYS = ("p", "beta", "rmin", "move")


def parse_action(text: str) -> ControllerAction:
    """Parse a raw model reply into an (unvetted) action.

    Requires numeric p, beta, rmin, move in the first JSON object; restart
    defaults to false and must be a boolean when present. Raises
    MalformedResponse otherwise.
    """
    obj = extract_first_object(text)
    vals = {}
    for key in _NUMERIC_KEYS:
        if key not in obj:
            raise MalformedResponse(f"missing numeric field {key!r}")
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise MalformedResponse(f"field {key!r} is not numeric: {v!r}")
        if not math.isfinite(float(v)):
            raise MalformedResponse(f"field {key!r} is not finite")
        vals[key] = float(v)
    restart = obj.get("restart", False)
    if not isinstance(restart, bool):
        raise MalformedResponse(f"restart is not a boolean: {restart!r}")
    note = str(obj.get("note", ""))
    return ControllerAction(
        SolverParams(p=vals["p"], beta=vals["beta"],
                     r_min=vals["rmin"], move=vals["move"]),
        restart=restart,
        note=note,
    )


def apply_safety_rails(
    raw: ControllerAction, obs: Observation, cfg: AgentConfig
) -> ControllerAction:
    """Clamp an action into the sanctioned envelope (idempotent).

    Ranges from the hard-bound table; beta additionally capped at 8 while
    grayness exceeds the gate; r_min may never grow; restart is dropped
    unless a valid best snapshot exists.
    """
    params = clamp_params(raw.params)
    if obs.grayness > cfg.grayness_gate:
        params = replace(params, beta=min(params.beta, GATE_BETA_CAP))
    params = replace(params, r_min=min(params.r_min, obs.r_min))
    restart = raw.restart and obs.best_snapshot_valid
    return ControllerAction(params, restart=restart, note=raw.note)


def fallback_action(iteration: int, n_total: int, cfg: AgentConfig) -> ControllerAction:
    """Deterministic staged schedule used when the model gives nothing usable.

    Stages are entered by budget fraction (8% / 50% / 75%) but never before
    the configured minimum stay in the preceding stage; p ramps 2.0 -> 4.5
    over cfg.penal_ramp_iters once the penalization stage starts and beta
    doubles every cfg.beta_double_every iterations, capped at the stage
    target (4 / 16 / 32).
    """
    e2 = math.ceil(0.08 * n_total)
    e3 = max(math.ceil(0.50 * n_total), e2 + cfg.phase_min_iters_penalization)
    e4 = max(math.ceil(0.75 * n_total), e3 + cfg.phase_min_iters_sharpening)
    if iteration < e2:
        params = SolverParams(
            p=1.0 + (iteration / e2 if e2 else 1.0),
            beta=1.0, r_min=1.50, move=0.20,
        )
    else:
        p = min(4.5, 2.0 + 2.5 * (iteration - e2) / cfg.penal_ramp_iters)
        beta = 2.0 ** ((iteration - e2) // cfg.beta_double_every)
        if iteration < e3:
            params = SolverParams(p, min(beta, 4.0), 1.35, 0.15)
        elif iteration < e4:
            params = SolverParams(p, min(beta, 16.0), 1.25, 0.08)
        else:
            params = SolverParams(p, min(beta, 32.0), 1.20, 0.05)
    return ControllerAction(params, restart=False, note="fallback: staged advisory")


@dataclass
class CallRecord:
    """One audited model exchange; the JSONL rows double as replay fixtures."""

    seq: int
    iteration: int
    prompt_system: str
    prompt_user: str
    raw_response: str
    action_pre_rails: dict
    action_post_rails: dict
    gate_active: bool
    fallback_used: bool
    latency_ms: float

    def as_dict(self) -> dict:
        return asdict(self)


def _action_dict(action: ControllerAction) -> dict:
    return {
        "p": action.params.p, "beta": action.params.beta,
        "rmin": action.params.r_min, "move": action.params.move,
        "restart": action.restart, "note": action.note,
    }


def agent_decide(
    state, client: CompletionClient, cfg: AgentConfig, seq: int
) -> tuple[ControllerAction, CallRecord]:
    """One full decision: observe, ask, parse, rail, record."""
    obs = build_observation(state)
    bundle = render_prompt(obs, cfg)
    t0 = time.perf_counter()
    raw_text = ""
    fallback_used = False
    try:
        raw_text = client.complete(
            bundle.system_text, bundle.user_text, OUTPUT_TOKEN_CAP
        )
        pre = parse_action(raw_text)
    except Exception:  # malformed reply or any client failure degrades
        pre = fallback_action(state.iteration, state.n_total, cfg)
        fallback_used = True
    latency_ms = (time.perf_counter() - t0) * 1e3
    post = apply_safety_rails(pre, obs, cfg)
    record = CallRecord(
        seq=seq,
        iteration=state.iteration,
        prompt_system=bundle.system_text,
        prompt_user=bundle.user_text,
        raw_response=raw_text,
        action_pre_rails=_action_dict(pre),
        action_post_rails=_action_dict(post),
        gate_active=obs.grayness > cfg.grayness_gate,
        fallback_used=fallback_used,
        latency_ms=latency_ms,
    )
    return post, record


class AgentController(Controller):
    """Engine-facing wrapper: holds the cadence, records, and last action."""

    kind = "llm"

    def __init__(self, client: CompletionClient, cfg: AgentConfig, n_total: int):
        self.client = client
        self.cfg = cfg
        self.n_total = n_total
        self.records: list[CallRecord] = []
        self.fallback_count = 0

    def decide(self, state) -> ControllerAction | None:
        it = state.iteration
        if it == 0:
            # Stage-appropriate start; no history yet, so no model call.
            return ControllerAction(EXPLORATION_PARAMS, note="initial parameters")
        if it % self.cfg.call_every != 0:
            return None
        action, record = agent_decide(state, self.client, self.cfg, len(self.records) + 1)
        self.records.append(record)
        if record.fallback_used:
            self.fallback_count += 1
        return action
