"""Serialization of run artifacts: summaries, traces, call logs, densities.

Every run directory holds summary.json (the full run document, config
embedded), trace.csv (per-iteration scalars, tidy columns), density.topd /
density.csv (the final physical field), and calls.jsonl for agent runs.
The TOPD format is a 4-byte magic, three little-endian uint32 grid dims
(nz = 0 for 2-D), then the field as little-endian float64 in C order.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

TOPD_MAGIC = b"TOPD"

TRACE_COLUMNS = (
    "iteration", "phase", "compliance", "grayness", "checkerboard",
    "volume", "p", "beta", "r_min", "move", "restart",
)


def write_summary_json(path, summary_dict: dict) -> None:
    Path(path).write_text(json.dumps(summary_dict, indent=2) + "\n", encoding="utf-8")


def read_summary_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_trace_csv(path, trace: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: row[k] for k in TRACE_COLUMNS})


def read_trace_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed: dict = {"phase": row["phase"]}
            parsed["iteration"] = int(row["iteration"])
            parsed["restart"] = int(row["restart"])
            for k in TRACE_COLUMNS:
                if k not in parsed:
                    parsed[k] = float(row[k])
            out.append(parsed)
    return out


def write_density_topd(path, rho: np.ndarray, mesh) -> None:
    dims = np.array([mesh.nx, mesh.ny, mesh.nz], dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(TOPD_MAGIC)
        fh.write(dims.tobytes())
        fh.write(np.ascontiguousarray(rho, dtype="<f8").tobytes())


def read_density_topd(path) -> tuple[tuple[int, int, int], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != TOPD_MAGIC:
        raise ValueError(f"{path}: not a TOPD density file")
    dims = np.frombuffer(raw[4:16], dtype="<u4")
    values = np.frombuffer(raw[16:], dtype="<f8")
    nx, ny, nz = (int(d) for d in dims)
    expect = nx * ny * max(nz, 1)
    if values.size != expect:
        raise ValueError(f"{path}: expected {expect} values, found {values.size}")
    return (nx, ny, nz), values.copy()


def write_density_csv(path, rho: np.ndarray, mesh) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("ix", "iy", "iz", "rho"))
        grid = np.asarray(rho).reshape(mesh.shape)
        if mesh.is_3d:
            for ix in range(mesh.nx):
                for iy in range(mesh.ny):
                    for iz in range(mesh.nz):
                        writer.writerow((ix, iy, iz, repr(float(grid[ix, iy, iz]))))
        else:
            for ix in range(mesh.nx):
                for iy in range(mesh.ny):
                    writer.writerow((ix, iy, 0, repr(float(grid[ix, iy]))))


def write_calls_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = rec.as_dict() if hasattr(rec, "as_dict") else dict(rec)
            fh.write(json.dumps(d) + "\n")


def read_calls_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_run_outputs(out_dir, result) -> Path:
    """Write the standard artifact set for one run; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = getattr(result.controller, "records", [])
    summary = result.summary.as_dict()
    if records:
        summary["call_log"] = "calls.jsonl"
        write_calls_jsonl(out / "calls.jsonl", records)
    write_summary_json(out / "summary.json", summary)
    write_trace_csv(out / "trace.csv", result.summary.trace)
    write_density_topd(out / "density.topd", result.rho_phys, result.problem.mesh)
    write_density_csv(out / "density.csv", result.rho_phys, result.problem.mesh)
    return out
