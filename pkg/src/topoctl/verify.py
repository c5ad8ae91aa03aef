"""Byte-exact replay verification of recorded agent runs.

Re-executes a run from the config embedded in its summary document, feeding
the recorded raw responses back through the full parse/rail/engine path,
and compares the produced trace and counters field by field. Wall-clock
fields are excluded (they cannot repeat); everything physical must match
bit for bit. Also re-checks the safety-rail invariants over the replayed
call records, so a tampered log fails either the invariant or the first
diverging trace field.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .agent import GATE_BETA_CAP
from .controllers import BETA_RANGE, MOVE_RANGE, P_RANGE, RMIN_RANGE
from .engine import RunConfig, run_benchmark
from .export import read_summary_json

#: summary scalars that must reproduce exactly under replay
_COMPARED_FIELDS = (
    "problem", "preset", "controller", "seed", "n_iters", "v_f",
    "final_compliance", "final_grayness", "final_volume",
    "best_iteration", "best_compliance", "iterations_executed", "tail_rows",
    "restart_count", "call_count", "fallback_count",
    "volume_infeasible_events", "aborted",
)


@dataclass
class VerifyResult:
    ok: bool
    first_divergence: str | None
    rail_violations: list[str]
    call_count: int
    fallback_count: int


def check_rail_invariants(records: list[dict]) -> list[str]:
    """Sanctioned-range, gate, and monotone-r_min checks over call records."""
    violations = []
    prev_rmin = None
    for rec in records:
        post = rec["action_post_rails"]
        seq = rec["seq"]
        for key, (lo, hi) in (
            ("p", P_RANGE), ("beta", BETA_RANGE),
            ("rmin", RMIN_RANGE), ("move", MOVE_RANGE),
        ):
            if not lo <= post[key] <= hi:
                violations.append(f"call {seq}: {key}={post[key]} outside [{lo}, {hi}]")
        if rec["gate_active"] and post["beta"] > GATE_BETA_CAP:
            violations.append(
                f"call {seq}: beta={post['beta']} above gate cap {GATE_BETA_CAP}"
            )
        if prev_rmin is not None and post["rmin"] > prev_rmin + 1e-12:
            violations.append(
                f"call {seq}: rmin grew {prev_rmin} -> {post['rmin']}"
            )
        prev_rmin = post["rmin"]
    return violations


def replay_verify(summary_path, replay_log=None) -> VerifyResult:
    """Re-run from a summary document against its call log; compare exactly."""
    summary_path = Path(summary_path)
    original = read_summary_json(summary_path)
    if replay_log is None:
        log_name = original.get("call_log")
        if log_name is None:
            raise ValueError("summary has no call log and none was given")
        replay_log = summary_path.parent / log_name
    cfg = RunConfig.from_dict(original["config"])
    cfg.client_kind = "replay"
    cfg.replay_log = str(replay_log)
    result = run_benchmark(cfg)
    new = result.summary.as_dict()

    divergence = None
    for key in _COMPARED_FIELDS:
        if original.get(key) != new.get(key):
            divergence = (
                f"summary.{key}: recorded {original.get(key)!r}, "
                f"replayed {new.get(key)!r}"
            )
            break
    if divergence is None:
        old_trace, new_trace = original["trace"], new["trace"]
        if len(old_trace) != len(new_trace):
            divergence = (
                f"trace length: recorded {len(old_trace)}, replayed {len(new_trace)}"
            )
        else:
            for i, (a, b) in enumerate(zip(old_trace, new_trace)):
                for key in a:
                    if a[key] != b.get(key):
                        divergence = (
                            f"trace[{i}].{key}: recorded {a[key]!r}, "
                            f"replayed {b.get(key)!r}"
                        )
                        break
                if divergence:
                    break

    records = [r.as_dict() for r in getattr(result.controller, "records", [])]
    violations = check_rail_invariants(records)
    return VerifyResult(
        ok=divergence is None and not violations,
        first_divergence=divergence,
        rail_violations=violations,
        call_count=len(records),
        fallback_count=new["fallback_count"],
    )
