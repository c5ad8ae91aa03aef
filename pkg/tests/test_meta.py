"""Meta-optimization tests: delta parsing, bounded application, outer loop.

Covered here:

1. Delta parsing: note stripped, unknown constants reject the delta,
   non-numeric and non-integral-for-integer deltas are malformed, prose
   wrapping tolerated, empty object accepted.
2. Bounded application: clamping at both ends, integer rounding, float
   constants staying float, identity on the empty delta, input config
   left unmodified.
3. Comparison digest: deterministic text carrying every controller row and
   the current constants.
4. Outer loop with a stubbed comparison runner: zero-delta identity,
   extreme deltas pinned to bounds for ten iterations, version numbering
   and per-version persisted files, skip/reject/client-error handling,
   comparison count == problems x iterations, meta_log.json structure,
   end-to-end determinism.
"""

import json

import pytest

from topoctl.agent import AgentConfig, MalformedResponse
from topoctl.clients import FailingClient, SequenceClient
from topoctl.meta import (
    META_BOUNDS,
    MetaResult,
    UnknownConstant,
    apply_delta,
    digest_comparison,
    outer_loop,
    parse_meta_delta,
)


def fake_aggregate(problem="cantilever"):
    return {
        "problem": problem, "preset": "fast", "seeds": [0, 1],
        "controllers": {
            "fixed": {"mean_compliance": 88.0, "std_compliance": 0.5,
                      "mean_grayness": 0.19, "pct_vs_fixed": 0.0},
            "llm": {"mean_compliance": 79.0, "std_compliance": 0.4,
                    "mean_grayness": 0.004, "pct_vs_fixed": -10.2},
        },
    }


def stub_runner(problem, preset, seeds, cfg):
    return fake_aggregate(problem)


class TestParseMetaDelta:
    def test_note_is_stripped(self):
        delta = parse_meta_delta(
            '{"grayness_gate": -0.02, "call_every": 1, "note": "tighten"}')
        assert delta == {"grayness_gate": -0.02, "call_every": 1.0}

    def test_empty_object_keeps_config(self):
        assert parse_meta_delta("{}") == {}

    def test_prose_wrapping_tolerated(self):
        assert parse_meta_delta('I propose: {"call_every": 2} ok?') == {
            "call_every": 2.0}

    def test_unknown_constant_rejected(self):
        with pytest.raises(UnknownConstant):
            parse_meta_delta('{"learning_rate": 0.1}')
        with pytest.raises(UnknownConstant):  # one bad key spoils the delta
            parse_meta_delta('{"call_every": 1, "momentum": 0.9}')

    def test_non_numeric_delta_malformed(self):
        with pytest.raises(MalformedResponse):
            parse_meta_delta('{"grayness_gate": "smaller"}')
        with pytest.raises(MalformedResponse):
            parse_meta_delta('{"call_every": true}')

    def test_non_integral_delta_for_integer_constant(self):
        with pytest.raises(MalformedResponse):
            parse_meta_delta('{"call_every": 0.5}')
        # an integral float is fine
        assert parse_meta_delta('{"call_every": 2.0}') == {"call_every": 2.0}

    def test_float_constant_accepts_fractions(self):
        assert parse_meta_delta('{"grayness_gate": 0.013}') == {
            "grayness_gate": 0.013}


class TestApplyDelta:
    def test_clamped_at_upper_bound(self):
        cfg = apply_delta(AgentConfig(), {"grayness_gate": 0.20})
        assert cfg.grayness_gate == 0.35  # 0.20 + 0.20 clamped

    def test_clamped_at_lower_bound(self):
        cfg = apply_delta(AgentConfig(), {"call_every": -3})
        assert cfg.call_every == 3  # 5 - 3 = 2, floor is 3

    def test_empty_delta_is_identity(self):
        base = AgentConfig()
        assert apply_delta(base, {}) == base

    def test_integer_constants_stay_integers(self):
        cfg = apply_delta(AgentConfig(), {"penal_ramp_iters": 3.0})
        assert cfg.penal_ramp_iters == 15
        assert isinstance(cfg.penal_ramp_iters, int)

    def test_float_constants_stay_floats(self):
        cfg = apply_delta(AgentConfig(), {"grayness_gate": -0.05})
        assert cfg.grayness_gate == pytest.approx(0.15)

    def test_input_config_unmodified(self):
        base = AgentConfig()
        apply_delta(base, {"call_every": 5})
        assert base.call_every == 5

    def test_every_bound_reachable(self):
        lo = apply_delta(AgentConfig(), {k: -1e6 for k in META_BOUNDS})
        hi = apply_delta(AgentConfig(), {k: +1e6 for k in META_BOUNDS})
        for key, (low, high, _) in META_BOUNDS.items():
            assert lo.as_dict()[key] == low
            assert hi.as_dict()[key] == high


class TestDigest:
    def test_deterministic_and_complete(self):
        cfg = AgentConfig()
        a = digest_comparison(fake_aggregate(), cfg)
        b = digest_comparison(fake_aggregate(), cfg)
        assert a == b
        assert "fixed" in a and "llm" in a
        assert "-10.2" in a
        assert "current constants: " + json.dumps(cfg.as_dict()) in a

    def test_missing_baseline_prints_placeholder(self):
        aggregate = fake_aggregate()
        aggregate["controllers"]["llm"]["pct_vs_fixed"] = None
        digest = digest_comparison(aggregate, AgentConfig())
        assert "--" in digest


EXTREME_DELTA = json.dumps({
    "grayness_gate": 10, "call_every": -100, "penal_ramp_iters": 100,
    "beta_double_every": -100, "phase_min_iters_penalization": 100,
    "phase_min_iters_sharpening": -100,
})

BOUND_PINNED = {
    "grayness_gate": 0.35, "call_every": 3, "penal_ramp_iters": 20,
    "beta_double_every": 5, "phase_min_iters_penalization": 25,
    "phase_min_iters_sharpening": 4,
}


class TestOuterLoop:
    def run_loop(self, replies, problems=("cantilever",), iters=1, out_dir=None,
                 client=None):
        return outer_loop(
            problems, iters,
            client if client is not None else SequenceClient(replies),
            comparison_runner=stub_runner, out_dir=out_dir,
        )

    def test_zero_deltas_leave_config_untouched(self, tmp_path):
        result = self.run_loop(["{}"] * 6, problems=("a", "b", "c"), iters=2,
                               out_dir=tmp_path)
        assert result.final == result.initial == AgentConfig().as_dict()
        assert result.comparisons == 6
        assert len(result.steps) == 6
        assert all(s.accepted for s in result.steps)
        assert all(s.reason == "no-op delta" for s in result.steps)
        assert all(s.version == 0 for s in result.steps)
        assert result.configs == [result.initial]
        configs = sorted(p.name for p in tmp_path.glob("config_v*.json"))
        assert configs == ["config_v000.json"]

    def test_comparisons_iterate_problems_within_each_round(self):
        result = self.run_loop(["{}"] * 6, problems=("a", "b", "c"), iters=2)
        assert [s.problem for s in result.steps] == ["a", "b", "c", "a", "b", "c"]

    def test_extreme_deltas_stay_in_bounds_for_ten_iterations(self, tmp_path):
        result = self.run_loop([EXTREME_DELTA] * 10, iters=10, out_dir=tmp_path)
        assert result.final == {**AgentConfig().as_dict(), **BOUND_PINNED}
        for step in result.steps:
            for key, (lo, hi, _) in META_BOUNDS.items():
                assert lo <= step.config[key] <= hi
        # the first step pins everything; the other nine are no-ops
        assert result.steps[0].version == 1
        assert result.steps[0].reason == "applied"
        assert all(s.reason == "no-op delta" for s in result.steps[1:])
        assert result.configs == [result.initial, result.final]
        configs = sorted(p.name for p in tmp_path.glob("config_v*.json"))
        assert configs == ["config_v000.json", "config_v001.json"]

    def test_persisted_files_match_config_versions(self, tmp_path):
        replies = ['{"call_every": 1}', '{"grayness_gate": -0.02}', "{}"]
        result = self.run_loop(replies, iters=3, out_dir=tmp_path)
        for version, expected in enumerate(result.configs):
            doc = json.loads((tmp_path / f"config_v{version:03d}.json").read_text())
            assert doc == {"version": version, "constants": expected}
        assert result.final["call_every"] == 6
        assert result.final["grayness_gate"] == pytest.approx(0.18)

    def test_malformed_reply_skipped(self):
        result = self.run_loop(['{"call_every": 0.5}'])
        step = result.steps[0]
        assert step.accepted is False
        assert step.reason.startswith("skipped:")
        assert result.final == result.initial

    def test_unknown_constant_rejects_whole_delta(self):
        result = self.run_loop(['{"call_every": 1, "warp_factor": 9}'])
        step = result.steps[0]
        assert step.accepted is False
        assert step.reason.startswith("rejected:")
        assert result.final == result.initial

    def test_client_failure_keeps_config_and_continues(self):
        result = self.run_loop([], client=FailingClient())
        step = result.steps[0]
        assert step.accepted is False
        assert step.reason.startswith("client error: ClientError")
        assert result.final == result.initial

    def test_mixed_session_recovers_after_bad_steps(self):
        replies = ['{"call_every": 1}', "gibberish reply", '{"call_every": 1}']
        result = self.run_loop(replies, iters=3)
        assert [s.accepted for s in result.steps] == [True, False, True]
        assert result.final["call_every"] == 7
        assert result.steps[1].reason.startswith("skipped:")

    def test_meta_log_document(self, tmp_path):
        self.run_loop(['{"call_every": 1}', "{}"], iters=2, out_dir=tmp_path)
        log = json.loads((tmp_path / "meta_log.json").read_text())
        assert set(log) == {"initial", "final", "comparisons", "steps"}
        assert log["comparisons"] == 2
        assert len(log["steps"]) == 2
        assert log["steps"][0]["raw_response"] == '{"call_every": 1}'
        assert log["final"]["call_every"] == 6

    def test_deterministic_given_the_same_replies(self):
        replies = ['{"grayness_gate": 0.01}', "{}", '{"call_every": -1}']
        a = self.run_loop(list(replies), iters=3)
        b = self.run_loop(list(replies), iters=3)
        assert a.final == b.final
        assert [s.reason for s in a.steps] == [s.reason for s in b.steps]
        assert a.configs == b.configs


class TestMetaResultConfigs:
    def test_counts_only_version_bumping_steps(self):
        result = MetaResult(initial={"v": 0}, final={"v": 2})
        from topoctl.meta import MetaStep
        result.steps = [
            MetaStep(1, "a", True, "applied", {}, {"v": 1}, ""),
            MetaStep(1, "a", True, "no-op delta", {}, {"v": 1}, ""),
            MetaStep(1, "a", False, "skipped: x", {}, {"v": 1}, ""),
            MetaStep(2, "a", True, "applied", {}, {"v": 2}, ""),
        ]
        assert result.configs == [{"v": 0}, {"v": 1}, {"v": 2}]
