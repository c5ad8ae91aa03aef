"""Artifact serialization tests: TOPD densities, trace CSV, JSON documents.

Covered here:

1. TOPD density files: byte layout (magic, little-endian uint32 dims,
   float64 payload), lossless 2-D and 3-D round trips, magic and element
   count validation.
2. Trace CSV: header columns, exact float round trip through repr-free
   float() parsing, integer iteration/restart, phase as text.
3. Density CSV: one row per element with full-precision values.
4. Summary JSON and call-log JSONL round trips.
5. write_run_outputs: the standard artifact set, with calls.jsonl present
   exactly when the controller made completion calls.
"""

import json
import struct

import numpy as np
import pytest
from conftest import make_cantilever

from topoctl.engine import RunConfig, execute_run
from topoctl.export import (
    TOPD_MAGIC,
    TRACE_COLUMNS,
    read_calls_jsonl,
    read_density_topd,
    read_summary_json,
    read_trace_csv,
    write_calls_jsonl,
    write_density_csv,
    write_density_topd,
    write_run_outputs,
    write_summary_json,
    write_trace_csv,
)
from topoctl.fem import Mesh


class TestDensityTopd:
    def test_round_trip_2d(self, tmp_path):
        mesh = Mesh(6, 4)
        rng = np.random.default_rng(0)
        rho = rng.uniform(0.0, 1.0, mesh.n_elements)
        path = tmp_path / "density.topd"
        write_density_topd(path, rho, mesh)
        dims, values = read_density_topd(path)
        assert dims == (6, 4, 0)
        assert np.array_equal(values, rho)  # bit-exact

    def test_round_trip_3d(self, tmp_path):
        mesh = Mesh(4, 3, 2)
        rng = np.random.default_rng(1)
        rho = rng.uniform(0.0, 1.0, mesh.n_elements)
        path = tmp_path / "density.topd"
        write_density_topd(path, rho, mesh)
        dims, values = read_density_topd(path)
        assert dims == (4, 3, 2)
        assert np.array_equal(values, rho)

    def test_byte_layout(self, tmp_path):
        mesh = Mesh(2, 1)
        rho = np.array([0.25, 0.75])
        path = tmp_path / "density.topd"
        write_density_topd(path, rho, mesh)
        raw = path.read_bytes()
        assert raw[:4] == TOPD_MAGIC == b"TOPD"
        assert struct.unpack("<3I", raw[4:16]) == (2, 1, 0)
        assert struct.unpack("<2d", raw[16:]) == (0.25, 0.75)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.topd"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError, match="TOPD"):
            read_density_topd(path)

    def test_wrong_count_rejected(self, tmp_path):
        mesh = Mesh(3, 3)
        path = tmp_path / "density.topd"
        write_density_topd(path, np.ones(9), mesh)
        truncated = path.read_bytes()[:-8]
        path.write_bytes(truncated)
        with pytest.raises(ValueError, match="expected 9 values"):
            read_density_topd(path)


class TestTraceCsv:
    @staticmethod
    def sample_rows():
        return [
            {"iteration": 0, "phase": "main", "compliance": 87.94119,
             "grayness": 1 / 3, "checkerboard": 0.125, "volume": 0.4,
             "p": 3.0, "beta": 1.0, "r_min": 1.5, "move": 0.2, "restart": 0},
            {"iteration": 1, "phase": "tail", "compliance": 79.2e-3,
             "grayness": 0.0123456789012345678, "checkerboard": 0.0,
             "volume": 0.39999999999999991, "p": 4.5, "beta": 32.0,
             "r_min": 1.2, "move": 0.05, "restart": 1},
        ]

    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "trace.csv"
        rows = self.sample_rows()
        write_trace_csv(path, rows)
        back = read_trace_csv(path)
        assert back == rows
        assert isinstance(back[0]["iteration"], int)
        assert isinstance(back[0]["restart"], int)
        assert isinstance(back[0]["phase"], str)
        assert isinstance(back[0]["compliance"], float)

    def test_header(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace_csv(path, self.sample_rows())
        header = path.read_text().splitlines()[0]
        assert header == ",".join(TRACE_COLUMNS)
        assert len(TRACE_COLUMNS) == 11


class TestJsonDocuments:
    def test_summary_round_trip(self, tmp_path):
        doc = {"controller": "fixed", "final_compliance": 87.94119218,
               "trace": [{"iteration": 0}], "config": {"seed": 3}}
        path = tmp_path / "summary.json"
        write_summary_json(path, doc)
        assert read_summary_json(path) == doc
        assert path.read_text().endswith("\n")

    def test_calls_round_trip(self, tmp_path):
        records = [
            {"seq": 1, "iteration": 5, "raw_response": '{"p": 3}',
             "fallback_used": False, "latency_ms": 0.25},
            {"seq": 2, "iteration": 10, "raw_response": "oops",
             "fallback_used": True, "latency_ms": 0.5},
        ]
        path = tmp_path / "calls.jsonl"
        write_calls_jsonl(path, records)
        assert read_calls_jsonl(path) == records
        assert len(path.read_text().strip().splitlines()) == 2


class TestRunOutputs:
    def test_fixed_run_artifact_set(self, tmp_path):
        result = execute_run(
            make_cantilever(8, 4),
            RunConfig(problem="cantilever", preset="unit-test",
                      controller="fixed", seed=0, n_iters=4),
        )
        out = write_run_outputs(tmp_path / "run", result)
        names = sorted(p.name for p in out.iterdir())
        assert names == ["density.csv", "density.topd", "summary.json", "trace.csv"]

        summary = read_summary_json(out / "summary.json")
        assert "call_log" not in summary
        assert summary["controller"] == "fixed"
        assert summary["final_compliance"] == result.summary.final_compliance

        trace = read_trace_csv(out / "trace.csv")
        assert trace == result.summary.trace

        dims, values = read_density_topd(out / "density.topd")
        assert dims == (8, 4, 0)
        assert np.array_equal(values, result.rho_phys)

        csv_rows = (out / "density.csv").read_text().splitlines()
        assert csv_rows[0] == "ix,iy,iz,rho"
        assert len(csv_rows) == 1 + 32
        grid = result.rho_phys.reshape(result.problem.mesh.shape)
        ix, iy, iz, rho = csv_rows[1].split(",")
        assert (ix, iy, iz) == ("0", "0", "0")
        assert float(rho) == grid[0, 0]  # repr round-trips exactly

    def test_agent_run_includes_call_log(self, tmp_path):
        result = execute_run(
            make_cantilever(8, 4),
            RunConfig(problem="cantilever", preset="unit-test",
                      controller="llm", seed=0, n_iters=12),
        )
        out = write_run_outputs(tmp_path / "run", result)
        summary = read_summary_json(out / "summary.json")
        assert summary["call_log"] == "calls.jsonl"
        calls = read_calls_jsonl(out / "calls.jsonl")
        assert [c["seq"] for c in calls] == [1, 2]
        assert [c["iteration"] for c in calls] == [5, 10]
        assert all(c["fallback_used"] is False for c in calls)
        assert calls[0]["raw_response"]  # the verbatim completion is kept
