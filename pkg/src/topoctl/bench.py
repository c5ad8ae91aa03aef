"""Controller-comparison runner: the standardized evaluation grid.

Runs a (controllers x seeds) grid on one problem/preset, each cell under
the identical protocol (same seeds, same tail), aggregates final
compliance/grayness per controller, and reports percent deviation from the
fixed baseline. Cells run on a thread pool (linear algebra releases the
GIL); results are keyed by cell, so scheduling order never affects output.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .agent import AgentConfig
from .engine import RunConfig, run_benchmark

DEFAULT_CONTROLLERS = ("fixed", "three_field", "expert", "schedule_only", "tail_only", "llm")


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def run_comparison(
    problem: str,
    preset: str,
    controllers=DEFAULT_CONTROLLERS,
    seeds=(0, 1, 2, 3, 4),
    client_kind: str = "mock",
    agent_cfg: AgentConfig | None = None,
    n_iters: int | None = None,
    workers: int | None = None,
    out_dir=None,
) -> dict:
    """Run the grid and return the aggregate document (also written to disk).

    Failed cells (solver aborts) are reported per cell and excluded from the
    aggregate statistics; the aggregate is still produced.
    """
    agent_cfg = agent_cfg or AgentConfig()
    cells = [(c, s) for c in controllers for s in seeds]

    def one(cell):
        controller, seed = cell
        cfg = RunConfig(
            problem=problem, preset=preset, controller=controller, seed=seed,
            n_iters=n_iters, client_kind=client_kind, agent=agent_cfg,
        )
        run_out = None
        if out_dir is not None:
            run_out = Path(out_dir) / "runs" / controller / f"seed_{seed}"
        return cell, run_benchmark(cfg, out_dir=run_out)

    n_workers = workers or min(len(cells), os.cpu_count() or 1)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = dict(pool.map(one, cells))
    else:
        results = dict(map(one, cells))

    aggregate: dict = {
        "problem": problem,
        "preset": preset,
        "seeds": list(seeds),
        "client_kind": client_kind,
        "agent": agent_cfg.as_dict(),
        "controllers": {},
    }
    for controller in controllers:
        per_seed = []
        for seed in seeds:
            summary = results[(controller, seed)].summary
            per_seed.append({
                "seed": seed,
                "final_compliance": summary.final_compliance,
                "final_grayness": summary.final_grayness,
                "best_iteration": summary.best_iteration,
                "restart_count": summary.restart_count,
                "fallback_count": summary.fallback_count,
                "call_count": summary.call_count,
                "wall_time_s": summary.wall_time_s,
                "aborted": summary.aborted,
                "abort_reason": summary.abort_reason,
            })
        ok = [r for r in per_seed if not r["aborted"]]
        mean_c, std_c = _mean_std([r["final_compliance"] for r in ok])
        mean_g, _ = _mean_std([r["final_grayness"] for r in ok])
        mean_t, _ = _mean_std([r["wall_time_s"] for r in ok])
        best_iters = [r["best_iteration"] for r in ok if r["best_iteration"] is not None]
        aggregate["controllers"][controller] = {
            "runs": per_seed,
            "n_failed": len(per_seed) - len(ok),
            "mean_compliance": mean_c,
            "std_compliance": std_c,
            "mean_grayness": mean_g,
            "mean_wall_time_s": mean_t,
            "mean_best_iteration": (
                float(np.mean(best_iters)) if best_iters else None
            ),
        }
    fixed_mean = aggregate["controllers"].get("fixed", {}).get("mean_compliance")
    for controller, agg in aggregate["controllers"].items():
        if fixed_mean and np.isfinite(fixed_mean) and np.isfinite(agg["mean_compliance"]):
            agg["pct_vs_fixed"] = 100.0 * (agg["mean_compliance"] - fixed_mean) / fixed_mean
        else:
            agg["pct_vs_fixed"] = None

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "aggregate.json").write_text(
            json.dumps(aggregate, indent=2) + "\n", encoding="utf-8"
        )
        _write_plot_csv(out / "plot_data.csv", results)
    aggregate["_results"] = results
    return aggregate


def _write_plot_csv(path, results) -> None:
    """Tidy long-format CSV of every trace, ready for plotting tools."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow((
            "controller", "seed", "iteration", "phase", "compliance",
            "grayness", "checkerboard", "volume", "p", "beta", "r_min", "move",
        ))
        for (controller, seed), result in sorted(results.items()):
            for row in result.summary.trace:
                writer.writerow((
                    controller, seed, row["iteration"], row["phase"],
                    repr(row["compliance"]), repr(row["grayness"]),
                    repr(row["checkerboard"]), repr(row["volume"]),
                    row["p"], row["beta"], row["r_min"], row["move"],
                ))
