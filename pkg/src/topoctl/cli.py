"""Command-line interface.

    topoctl run            one benchmark run
    topoctl compare        controllers x seeds grid with aggregate report
    topoctl meta           outer loop tuning the agent constants
    topoctl replay-verify  byte-exact re-check of a recorded agent run

Exit codes: 0 success, 2 usage error, 3 solver abort, 4 replay mismatch.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .agent import AgentConfig
from .bench import DEFAULT_CONTROLLERS, run_comparison
from .clients import SequenceClient
from .controllers import CONTROLLER_KINDS
from .engine import RunConfig, run_benchmark
from .meta import outer_loop
from .problems import PRESETS, PROBLEM_IDS
from .verify import replay_verify

EXIT_SOLVER_ABORT = 3
EXIT_REPLAY_MISMATCH = 4


def _load_agent_config(path: str | None) -> AgentConfig:
    if path is None:
        return AgentConfig()
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    constants = doc.get("constants", doc)
    return AgentConfig.from_dict(constants)


@click.group()
def main() -> None:
    """Adaptive continuation control for density-based topology optimization."""


@main.command("run")
@click.option("--problem", type=click.Choice(PROBLEM_IDS), required=True)
@click.option("--preset", type=click.Choice(tuple(PRESETS)), default="fast",
              show_default=True)
@click.option("--controller", type=click.Choice(CONTROLLER_KINDS),
              default="three_field", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--iters", type=int, default=None,
              help="Override the preset's iteration budget.")
@click.option("--client", "client_kind",
              type=click.Choice(("live", "mock", "replay")), default="mock",
              show_default=True, help="Completion client for the llm controller.")
@click.option("--replay-log", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Call log to replay (with --client replay).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Agent constants as JSON.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Write summary/trace/density artifacts here.")
@click.option("--no-tail", is_flag=True, help="Skip the sharpening tail.")
def cmd_run(problem, preset, controller, seed, iters, client_kind, replay_log,
            config_path, out_dir, no_tail):
    """Run one benchmark problem under one controller."""
    if client_kind == "replay" and replay_log is None:
        raise click.UsageError("--client replay needs --replay-log")
    cfg = RunConfig(
        problem=problem, preset=preset, controller=controller, seed=seed,
        n_iters=iters, client_kind=client_kind, replay_log=replay_log,
        agent=_load_agent_config(config_path),
        tail_enabled=False if no_tail else None,
    )
    result = run_benchmark(cfg, out_dir=out_dir)
    s = result.summary
    if s.aborted:
        click.echo(f"ABORTED after {s.iterations_executed} iterations: {s.abort_reason}")
        sys.exit(EXIT_SOLVER_ABORT)
    best = f"{s.best_compliance:.3f} @ {s.best_iteration}" if s.best_compliance else "--"
    click.echo(
        f"{problem}/{preset} {controller} seed={seed}: "
        f"C={s.final_compliance:.3f} G={s.final_grayness:.4f} "
        f"(best {best}, {s.iterations_executed}+{s.tail_rows} iters, "
        f"{s.wall_time_s:.1f}s)"
    )
    if out_dir:
        click.echo(f"artifacts in {out_dir}")


@main.command("compare")
@click.option("--problem", type=click.Choice(PROBLEM_IDS), required=True)
@click.option("--preset", type=click.Choice(tuple(PRESETS)), default="fast",
              show_default=True)
@click.option("--controllers", default=",".join(DEFAULT_CONTROLLERS),
              show_default=True, help="Comma-separated controller kinds.")
@click.option("--seeds", type=int, default=5, show_default=True,
              help="Number of seeds (0..n-1).")
@click.option("--iters", type=int, default=None)
@click.option("--client", "client_kind",
              type=click.Choice(("live", "mock")), default="mock", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--workers", type=int, default=None,
              help="Thread-pool width (default: one per cell, capped by CPUs).")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def cmd_compare(problem, preset, controllers, seeds, iters, client_kind,
                config_path, workers, out_dir):
    """Run the controller comparison grid and write the aggregate report."""
    kinds = tuple(k.strip() for k in controllers.split(",") if k.strip())
    bad = set(kinds) - set(CONTROLLER_KINDS)
    if bad:
        raise click.UsageError(f"unknown controllers: {sorted(bad)}")
    aggregate = run_comparison(
        problem, preset, controllers=kinds, seeds=tuple(range(seeds)),
        client_kind=client_kind, agent_cfg=_load_agent_config(config_path),
        n_iters=iters, workers=workers, out_dir=out_dir,
    )
    aborted = 0
    for kind in kinds:
        agg = aggregate["controllers"][kind]
        pct = agg["pct_vs_fixed"]
        pct_s = f"{pct:+7.2f}%" if pct is not None else "     --"
        click.echo(
            f"{kind:<14} C={agg['mean_compliance']:9.3f} "
            f"+/-{agg['std_compliance']:7.3f}  G={agg['mean_grayness']:7.4f}  "
            f"vs fixed {pct_s}  ({agg['n_failed']} failed)"
        )
        aborted += agg["n_failed"]
    click.echo(f"aggregate written to {out_dir}/aggregate.json")
    if aborted:
        sys.exit(EXIT_SOLVER_ABORT)


@main.command("meta")
@click.option("--problems", default="cantilever", show_default=True,
              help="Comma-separated problem ids.")
@click.option("--iters", type=int, default=2, show_default=True,
              help="Outer iterations per problem.")
@click.option("--preset", type=click.Choice(tuple(PRESETS)), default="fast",
              show_default=True)
@click.option("--seeds", type=int, default=2, show_default=True)
@click.option("--client", "client_kind",
              type=click.Choice(("live", "mock")), default="mock", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def cmd_meta(problems, iters, preset, seeds, client_kind, config_path, out_dir):
    """Tune the agent constants across repeated comparisons."""
    ids = tuple(p.strip() for p in problems.split(",") if p.strip())
    bad = set(ids) - set(PROBLEM_IDS)
    if bad:
        raise click.UsageError(f"unknown problems: {sorted(bad)}")
    if client_kind == "live":
        from .clients import LiveClient

        meta_client = LiveClient()
    else:
        # Hermetic default: a zero-delta script (identity tuning).
        meta_client = SequenceClient(["{}"] * (iters * len(ids)))
    result = outer_loop(
        ids, iters, meta_client, cfg0=_load_agent_config(config_path),
        preset=preset, seeds=tuple(range(seeds)), out_dir=out_dir,
    )
    click.echo(f"comparisons: {result.comparisons}")
    click.echo(f"config versions: {len(result.configs)}")
    click.echo("final constants: " + json.dumps(result.final))
    click.echo(f"log written to {out_dir}/meta_log.json")


@main.command("replay-verify")
@click.option("--summary", "summary_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--replay-log", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Defaults to the call log next to the summary.")
def cmd_replay_verify(summary_path, replay_log):
    """Re-run a recorded agent run and demand bit-identical results."""
    res = replay_verify(summary_path, replay_log)
    if res.ok:
        click.echo(
            f"PASS: {res.call_count} calls replayed bit-identically "
            f"({res.fallback_count} fallbacks)"
        )
        return
    if res.first_divergence:
        click.echo(f"FAIL: {res.first_divergence}")
    for v in res.rail_violations:
        click.echo(f"FAIL rail invariant: {v}")
    sys.exit(EXIT_REPLAY_MISMATCH)


if __name__ == "__main__":
    main()
