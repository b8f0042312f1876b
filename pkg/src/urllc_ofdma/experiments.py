"""Monte-Carlo experiment harness: sweeps, averaging, and emission.

An experiment sweeps either the power budget or the user count, averaging
the per-RE sum throughput over fading realizations.  Realization r always
derives its generator from (master seed, r), so every sweep point and
scheme sees the same channels and the emitted curves are paired.  For the
user sweep one channel matrix is drawn at the largest K and truncated, so
adding a user never redraws the others' fading.

Results land in a small table that serializes to CSV (one row per sweep
cell) and JSON (with the full per-realization arrays), plus rendered
figures alongside.
"""

from __future__ import annotations

import csv
import io
import json
import multiprocessing
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .fbl import UserBitBudget
from .model import ChannelGenSpec, ProblemInstance, generate_instance
from .sca import SolverConfig
from .schemes import SchemeId, run_scheme, solve_upper_bound

SWEEP_AXES = ("p_max_dbm", "num_users")

CSV_COLUMNS = ("sweep_value", "scheme", "mean_throughput_bps_hz", "stderr",
               "infeasible_fraction", "realizations", "runtime_s")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one sweep."""

    sweep_axis: str
    sweep_values: tuple
    num_users: int
    num_subcarriers: int
    num_slots: int
    p_max_dbm: float                      # fixed budget for the user sweep
    bits_per_packet: int
    error_prob: float
    delay_slots: tuple                    # per user, length >= max swept K
    weights: tuple | None = None
    channel: ChannelGenSpec = field(default_factory=ChannelGenSpec)
    realizations: int = 50
    schemes: tuple = (SchemeId.PROPOSED.value,)
    master_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
        if len(self.sweep_values) == 0:
            raise ValueError("sweep needs at least one value")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if len(self.schemes) == 0:
            raise ValueError("scheme list must not be empty")
        for s in self.schemes:
            SchemeId(s)  # validates
        max_k = self.max_users()
        if len(self.delay_slots) < max_k:
            raise ValueError(
                f"need {max_k} delay entries, have {len(self.delay_slots)}")
        if any(d > self.num_slots for d in self.delay_slots[:max_k]):
            raise ValueError("delay entries must not exceed the frame length")
        if self.weights is not None and len(self.weights) < max_k:
            raise ValueError(f"need {max_k} weight entries")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "delay_slots", tuple(self.delay_slots))
        object.__setattr__(self, "schemes",
                           tuple(SchemeId(s).value for s in self.schemes))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(self.weights))

    def max_users(self) -> int:
        if self.sweep_axis == "num_users":
            return int(max(self.sweep_values))
        return self.num_users

    def qos(self, num_users: int) -> tuple:
        w = self.weights or (1.0,) * num_users
        return tuple(
            UserBitBudget(self.bits_per_packet, self.error_prob,
                          int(self.delay_slots[k]), float(w[k]))
            for k in range(num_users))


def realization_seed(master_seed: int, r: int) -> np.random.Generator:
    """Generator for realization r, identical across sweep points/schemes."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, r]))


def _instance_for(spec: ExperimentSpec, sweep_value, r: int) -> ProblemInstance:
    rng = realization_seed(spec.master_seed, r)
    max_k = spec.max_users()
    dims = (max_k, spec.num_subcarriers, spec.num_slots)
    if spec.sweep_axis == "p_max_dbm":
        inst = generate_instance(spec.channel, dims, float(sweep_value),
                                 spec.qos(max_k), rng, seed=r)
        return inst
    inst = generate_instance(spec.channel, dims, spec.p_max_dbm,
                             spec.qos(max_k), rng, seed=r)
    return inst.subset_users(int(sweep_value))


def _solve_cell(spec: ExperimentSpec, sweep_value, r: int) -> dict:
    """All requested schemes on one (sweep point, realization)."""
    inst = _instance_for(spec, sweep_value, r)
    out = {}
    upper = None
    wants_upper = (SchemeId.UPPER_BOUND.value in spec.schemes
                   or SchemeId.BENCHMARK1.value in spec.schemes)
    if wants_upper:
        t0 = time.perf_counter()
        upper = solve_upper_bound(inst, spec.solver)
        upper_time = time.perf_counter() - t0
    for scheme in spec.schemes:
        if scheme == SchemeId.UPPER_BOUND.value:
            out[scheme] = (upper.metric, upper.feasible, upper_time)
            continue
        t0 = time.perf_counter()
        rep = run_scheme(scheme, inst, spec.solver, upper=upper)
        out[scheme] = (rep.metric, rep.feasible, time.perf_counter() - t0)
    return out


_WORKER_SPEC = None


def _worker_init(spec):
    global _WORKER_SPEC
    _WORKER_SPEC = spec
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass


def _worker_run(task):
    iv, r = task
    spec = _WORKER_SPEC
    return iv, r, _solve_cell(spec, spec.sweep_values[iv], r)


@dataclass
class ResultCell:
    sweep_value: float
    scheme: str
    metrics: list
    feasible: list
    runtime_s: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.metrics))

    @property
    def stderr(self) -> float:
        if len(self.metrics) < 2:
            return 0.0
        return float(np.std(self.metrics, ddof=1) / np.sqrt(len(self.metrics)))

    @property
    def infeasible_fraction(self) -> float:
        return float(np.mean([0.0 if f else 1.0 for f in self.feasible]))


@dataclass
class ResultTable:
    sweep_axis: str
    cells: list

    def cell(self, sweep_value, scheme: str) -> ResultCell:
        for c in self.cells:
            if c.scheme == scheme and c.sweep_value == sweep_value:
                return c
        raise KeyError((sweep_value, scheme))

    def schemes(self):
        seen = []
        for c in self.cells:
            if c.scheme not in seen:
                seen.append(c.scheme)
        return seen

    def sweep_values(self):
        seen = []
        for c in self.cells:
            if c.sweep_value not in seen:
                seen.append(c.sweep_value)
        return seen

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.cells:
            w.writerow([repr(float(c.sweep_value)), c.scheme, repr(c.mean),
                        repr(c.stderr), repr(c.infeasible_fraction),
                        len(c.metrics), f"{c.runtime_s:.3f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "sweep_axis": self.sweep_axis,
            "cells": [
                {
                    "sweep_value": float(c.sweep_value),
                    "scheme": c.scheme,
                    "mean_throughput_bps_hz": c.mean,
                    "stderr": c.stderr,
                    "infeasible_fraction": c.infeasible_fraction,
                    "realizations": len(c.metrics),
                    "runtime_s": c.runtime_s,
                    "metrics": list(map(float, c.metrics)),
                    "feasible": list(map(bool, c.feasible)),
                }
                for c in self.cells
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        cells = [
            ResultCell(sweep_value=c["sweep_value"], scheme=c["scheme"],
                       metrics=list(c["metrics"]),
                       feasible=list(c["feasible"]),
                       runtime_s=c["runtime_s"])
            for c in doc["cells"]
        ]
        return cls(sweep_axis=doc["sweep_axis"], cells=cells)


def run_experiment(spec: ExperimentSpec, workers: int = 1,
                   progress=None) -> ResultTable:
    """Execute the sweep; deterministic for a fixed master seed.

    Tasks fan out over (sweep point, realization); results are reduced in
    task order regardless of completion order, so worker count never
    changes the output values.
    """
    tasks = [(iv, r) for iv in range(len(spec.sweep_values))
             for r in range(spec.realizations)]
    results = {}
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init,
                      initargs=(spec,)) as pool:
            for iv, r, out in pool.imap_unordered(_worker_run, tasks,
                                                  chunksize=1):
                results[(iv, r)] = out
                if progress is not None:
                    progress(len(results), len(tasks))
    else:
        _worker_init(spec)
        for iv, r in tasks:
            results[(iv, r)] = _worker_run((iv, r))[2]
            if progress is not None:
                progress(len(results), len(tasks))

    cells = []
    for iv, sv in enumerate(spec.sweep_values):
        for scheme in spec.schemes:
            metrics, feas, rt = [], [], 0.0
            for r in range(spec.realizations):
                m, f, dt = results[(iv, r)][scheme]
                metrics.append(m)
                feas.append(f)
                rt += dt
            cells.append(ResultCell(sweep_value=float(sv), scheme=scheme,
                                    metrics=metrics, feasible=feas,
                                    runtime_s=rt))
    return ResultTable(sweep_axis=spec.sweep_axis, cells=cells)


def ensure_writable(out_dir: str) -> None:
    """Fail fast (before any solve) when the output path is unusable."""
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write_probe")
    try:
        with open(probe, "w") as fh:
            fh.write("ok")
    except OSError as exc:
        raise OSError(f"output directory {out_dir!r} is not writable: {exc}")
    finally:
        try:
            os.remove(probe)
        except OSError:
            pass


def emit_results(table: ResultTable, out_dir: str, basename: str = "results",
                 formats: tuple = ("csv", "json"), plots: bool = True) -> dict:
    """Write the table (and figures) to files; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    try:
        if "csv" in formats:
            path = os.path.join(out_dir, f"{basename}.csv")
            with open(path, "w") as fh:
                fh.write(table.to_csv())
            written["csv"] = path
        if "json" in formats:
            path = os.path.join(out_dir, f"{basename}.json")
            with open(path, "w") as fh:
                fh.write(table.to_json())
            written["json"] = path
    except OSError as exc:
        raise OSError(f"failed writing results under {out_dir!r}: {exc}")
    if plots:
        from .plots import render_sweep_figure
        written["figure"] = render_sweep_figure(
            table, os.path.join(out_dir, f"{basename}.png"))
    return written
