"""Outer meta-optimization loop over the agent-loop constants.

After each controller comparison the aggregate is digested into a short
text, a meta-level model proposes signed deltas to the agent constants as
JSON, and the deltas are applied under hard bounds. Updates happen after
every comparison; every accepted change persists a new numbered config
version. Unknown constant names reject the whole delta; malformed replies
and non-integral deltas for integer constants are skipped. All of it is
deterministic given the clients, so a recorded meta session replays to the
same final config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig, MalformedResponse, extract_first_object
from .bench import run_comparison

#: constant name -> (lower bound, upper bound, integer-valued)
META_BOUNDS: dict[str, tuple[float, float, bool]] = {
    "grayness_gate": (0.10, 0.35, False),
    "call_every": (3, 15, True),
    "penal_ramp_iters": (4, 20, True),
    "beta_double_every": (5, 20, True),
    "phase_min_iters_penalization": (4, 25, True),
    "phase_min_iters_sharpening": (4, 25, True),
}


class UnknownConstant(Exception):
    """The delta names a constant outside the tunable set."""


def parse_meta_delta(text: str) -> dict[str, float]:
    """Extract {constant: signed delta} from a meta reply.

    The note key is ignored; unknown keys raise UnknownConstant; non-numeric
    or non-integral (for integer constants) deltas raise MalformedResponse.
    """
    obj = extract_first_object(text)
    obj.pop("note", None)
    unknown = set(obj) - set(META_BOUNDS)
    if unknown:
        raise UnknownConstant(f"unknown constants: {sorted(unknown)}")
    delta: dict[str, float] = {}
    for key, value in obj.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedResponse(f"delta for {key!r} is not numeric: {value!r}")
        if META_BOUNDS[key][2] and float(value) != int(value):
            raise MalformedResponse(f"delta for {key!r} must be an integer")
        delta[key] = float(value)
    return delta


def apply_delta(cfg: AgentConfig, delta: dict[str, float]) -> AgentConfig:
    """New config with each named constant shifted and clamped to bounds."""
    values = cfg.as_dict()
    for key, d in delta.items():
        lo, hi, is_int = META_BOUNDS[key]
        new = values[key] + d
        new = min(max(new, lo), hi)
        values[key] = int(round(new)) if is_int else float(new)
    return AgentConfig.from_dict(values)


def digest_comparison(aggregate: dict, cfg: AgentConfig) -> str:
    """Deterministic one-screen text digest of a comparison aggregate."""
    lines = [
        f"problem={aggregate['problem']} preset={aggregate['preset']} "
        f"seeds={len(aggregate['seeds'])}",
        "controller      mean_C      std_C     mean_G   vs_fixed",
    ]
    for name, agg in aggregate["controllers"].items():
        pct = agg.get("pct_vs_fixed")
        pct_s = f"{pct:+8.2f}%" if pct is not None else "       --"
        lines.append(
            f"{name:<14} {agg['mean_compliance']:>9.3f} {agg['std_compliance']:>9.3f}"
            f" {agg['mean_grayness']:>9.4f} {pct_s}"
        )
    lines.append("current constants: " + json.dumps(cfg.as_dict()))
    return "\n".join(lines)


META_SYSTEM_TEXT = """\
You tune the constants of a parameter-steering loop for a structural
optimizer. After each benchmark comparison you may shift any of these
constants by a signed delta (applied under hard bounds):

  grayness_gate                 in [0.10, 0.35]   (float)
  call_every                    in [3, 15]        (integer)
  penal_ramp_iters              in [4, 20]        (integer)
  beta_double_every             in [5, 20]        (integer)
  phase_min_iters_penalization  in [4, 25]        (integer)
  phase_min_iters_sharpening    in [4, 25]        (integer)

Reply with one JSON object mapping constant names to signed deltas, plus an
optional "note". Example: {"grayness_gate": -0.02, "call_every": 1,
"note": "tighten gate, call slightly less often"}. An empty object {} keeps
the configuration unchanged. Favor the steered controller's mean compliance;
break ties toward lower grayness.
"""


@dataclass
class MetaStep:
    version: int
    problem: str
    accepted: bool
    reason: str
    delta: dict
    config: dict
    raw_response: str


@dataclass
class MetaResult:
    initial: dict
    final: dict
    steps: list[MetaStep] = field(default_factory=list)
    comparisons: int = 0

    @property
    def configs(self) -> list[dict]:
        """Distinct configuration versions, matching the persisted files."""
        out = [self.initial]
        seen = 0
        for s in self.steps:
            if s.accepted and s.version > seen:
                out.append(s.config)
                seen = s.version
        return out


def outer_loop(
    problems,
    n_iters_per_problem: int,
    meta_client,
    cfg0: AgentConfig | None = None,
    comparison_runner=None,
    preset: str = "fast",
    seeds=(0, 1),
    inner_client_kind: str = "mock",
    controllers=("fixed", "llm"),
    out_dir=None,
) -> MetaResult:
    """Meta-optimize the agent constants across repeated comparisons.

    comparison_runner(problem, preset, seeds, cfg) -> aggregate dict; the
    default runs real comparisons with a scripted-mock inner agent. The
    meta client sees the digest and proposes deltas; each accepted delta
    yields a persisted config version.
    """
    cfg = cfg0 or AgentConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = MetaResult(initial=cfg.as_dict(), final=cfg.as_dict())
    _persist(out, 0, cfg)
    version = 0

    def default_runner(problem, preset, seeds, cfg):
        return run_comparison(
            problem, preset, controllers=controllers, seeds=seeds,
            client_kind=inner_client_kind, agent_cfg=cfg,
            out_dir=None,
        )

    runner = comparison_runner or default_runner
    for _ in range(n_iters_per_problem):
        for problem in problems:
            aggregate = runner(problem, preset, seeds, cfg)
            result.comparisons += 1
            digest = digest_comparison(aggregate, cfg)
            accepted = False
            delta: dict = {}
            raw = ""
            try:
                raw = meta_client.complete(META_SYSTEM_TEXT, digest)
                delta = parse_meta_delta(raw)
                new_cfg = apply_delta(cfg, delta)
                accepted = True
                reason = "applied" if new_cfg != cfg else "no-op delta"
                if new_cfg != cfg:
                    cfg = new_cfg
                    version += 1
                    _persist(out, version, cfg)
            except UnknownConstant as err:
                reason = f"rejected: {err}"
            except MalformedResponse as err:
                reason = f"skipped: {err}"
            except Exception as err:  # client failure: keep config, move on
                reason = f"client error: {type(err).__name__}: {err}"
            result.steps.append(MetaStep(
                version=version, problem=problem, accepted=accepted,
                reason=reason, delta=delta, config=cfg.as_dict(), raw_response=raw,
            ))
    result.final = cfg.as_dict()
    if out is not None:
        log = [
            {
                "version": s.version, "problem": s.problem,
                "accepted": s.accepted, "reason": s.reason,
                "delta": s.delta, "config": s.config,
                "raw_response": s.raw_response,
            }
            for s in result.steps
        ]
        (out / "meta_log.json").write_text(
            json.dumps({
                "initial": result.initial, "final": result.final,
                "comparisons": result.comparisons, "steps": log,
            }, indent=2) + "\n",
            encoding="utf-8",
        )
    return result


def _persist(out: Path | None, version: int, cfg: AgentConfig) -> None:
    if out is None:
        return
    doc = {"version": version, "constants": cfg.as_dict()}
    (out / f"config_v{version:03d}.json").write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8"
    )
