"""Command-line front end.

Subcommands: ``sweep-power`` and ``sweep-users`` reproduce the benchmark
sweeps (CSV + JSON + figure per run), ``solve-one`` solves a single random
instance and prints the report, ``oracle-check`` compares the solver
against the exhaustive oracle on tiny instances.  Presets carry the
reference parameters; a JSON or TOML config file and command-line flags
override them in that order.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from .barrier import InnerConfig
from .experiments import (ExperimentSpec, ensure_writable, emit_results,
                          run_experiment)
from .model import ChannelGenSpec, generate_instance
from .sca import SolverConfig
from .schemes import SchemeId, oracle_solve, run_scheme

ALL_SCHEMES = ("upper_bound", "proposed", "benchmark1", "benchmark2")

PRESETS = {
    "sweep-power": {
        "desk": dict(
            num_users=4, num_subcarriers=16, num_slots=6,
            delay_slots=(2, 3, 6, 6), error_prob=1e-7, bits_per_packet=32,
            realizations=50, sweep_values=tuple(np.arange(20.0, 45.01, 2.5)),
            p_max_dbm=45.0, schemes=ALL_SCHEMES),
        "paper": dict(
            num_users=4, num_subcarriers=64, num_slots=6,
            delay_slots=(2, 3, 6, 6), error_prob=1e-7, bits_per_packet=160,
            realizations=100, sweep_values=tuple(np.arange(20.0, 45.01, 2.5)),
            p_max_dbm=45.0, schemes=ALL_SCHEMES),
    },
    "sweep-users": {
        "desk": dict(
            num_users=6, num_subcarriers=16, num_slots=4,
            delay_slots=(2, 4, 4, 4, 4, 4), error_prob=1e-6,
            bits_per_packet=24, realizations=50,
            sweep_values=(2, 3, 4, 5, 6), p_max_dbm=30.0,
            schemes=ALL_SCHEMES),
        "paper": dict(
            num_users=6, num_subcarriers=64, num_slots=4,
            delay_slots=(2, 4, 4, 4, 4, 4), error_prob=1e-6,
            bits_per_packet=160, realizations=100,
            sweep_values=(2, 3, 4, 5, 6), p_max_dbm=27.0,
            schemes=ALL_SCHEMES),
    },
}

CHANNEL_KEYS = ("cell_radius_m", "user_distances_m", "noise_density_dbm_hz",
                "subcarrier_bandwidth_hz")


def _load_config(path: str) -> dict:
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    if path.endswith(".toml"):
        import tomli
        with open(path, "rb") as fh:
            return tomli.load(fh)
    raise click.ClickException(
        f"config {path!r} must end in .json or .toml")


def _build_solver(params: dict) -> SolverConfig:
    solver = dict(params.pop("solver", {}))
    inner = InnerConfig(**solver.pop("inner", {}))
    return SolverConfig(inner=inner, **solver)


def _build_spec(axis: str, preset_name: str, config_path, seed, realizations,
                workers, schemes, sweep) -> tuple[ExperimentSpec, int]:
    params = dict(PRESETS[axis][preset_name])
    if config_path:
        params.update(_load_config(config_path))
    if seed is not None:
        params["master_seed"] = seed
    if realizations is not None:
        params["realizations"] = realizations
    if schemes:
        params["schemes"] = tuple(s.strip() for s in schemes.split(","))
    else:
        params.setdefault("schemes", ALL_SCHEMES)
    if sweep:
        vals = tuple(float(v) for v in sweep.split(","))
        params["sweep_values"] = vals
    channel = ChannelGenSpec(**{k: params.pop(k) for k in CHANNEL_KEYS
                                if k in params})
    solver = _build_solver(params)
    sweep_axis = "p_max_dbm" if axis == "sweep-power" else "num_users"
    if sweep_axis == "num_users":
        params["sweep_values"] = tuple(int(v) for v in params["sweep_values"])
        params["num_users"] = int(max(params["sweep_values"]))
    params.setdefault("master_seed", 0)
    try:
        spec = ExperimentSpec(sweep_axis=sweep_axis, channel=channel,
                              solver=solver, **params)
    except (TypeError, ValueError) as exc:
        raise click.ClickException(f"invalid experiment parameters: {exc}")
    return spec, (workers or 1)


def _echo_progress(done: int, total: int) -> None:
    if done == total or done % max(1, total // 20) == 0:
        click.echo(f"  {done}/{total} cells", err=True)


def _run_sweep(axis, preset, config, seed, realizations, workers, out,
               schemes, sweep, plots, basename):
    spec, workers = _build_spec(axis, preset, config, seed, realizations,
                                workers, schemes, sweep)
    ensure_writable(out)
    click.echo(f"{axis} [{preset}]: {len(spec.sweep_values)} points x "
               f"{spec.realizations} realizations, schemes: "
               f"{', '.join(spec.schemes)}", err=True)
    table = run_experiment(spec, workers=workers, progress=_echo_progress)
    written = emit_results(table, out, basename=basename, plots=plots)
    for kind, path in written.items():
        click.echo(f"wrote {kind}: {path}")
    _echo_summary(table)


def _echo_summary(table) -> None:
    header = f"{'sweep':>8} | " + " | ".join(
        f"{s:>20}" for s in table.schemes())
    click.echo(header)
    for sv in table.sweep_values():
        row = [f"{sv:>8.3g}"]
        for s in table.schemes():
            c = table.cell(sv, s)
            row.append(f"{c.mean:9.4f} ({c.infeasible_fraction:4.2f} inf)")
        click.echo(" | ".join(row))


def _sweep_options(fn):
    for deco in reversed([
        click.option("--config", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="JSON or TOML parameter file."),
        click.option("--seed", type=int, default=None, help="Master seed."),
        click.option("--realizations", type=int, default=None,
                     help="Fading realizations per sweep point."),
        click.option("--workers", type=int, default=1,
                     help="Parallel worker processes."),
        click.option("--out", type=click.Path(file_okay=False),
                     default="results", help="Output directory."),
        click.option("--schemes", default=None,
                     help="Comma list: upper_bound,proposed,benchmark1,benchmark2."),
        click.option("--sweep", default=None,
                     help="Comma list of sweep values (overrides preset)."),
        click.option("--preset", type=click.Choice(["desk", "paper"]),
                     default="desk", show_default=True),
        click.option("--plots/--no-plots", default=True, show_default=True),
    ]):
        fn = deco(fn)
    return fn


@click.group()
def main():
    """Short-packet OFDMA power and resource-element allocation."""


@main.command("sweep-power")
@_sweep_options
def sweep_power(config, seed, realizations, workers, out, schemes, sweep,
                preset, plots):
    """Average throughput vs maximum transmit power."""
    _run_sweep("sweep-power", preset, config, seed, realizations, workers,
               out, schemes, sweep, plots, "sweep_power")


@main.command("sweep-users")
@_sweep_options
def sweep_users(config, seed, realizations, workers, out, schemes, sweep,
                preset, plots):
    """Average throughput vs number of users."""
    _run_sweep("sweep-users", preset, config, seed, realizations, workers,
               out, schemes, sweep, plots, "sweep_users")


@main.command("solve-one")
@click.option("--users", "-k", type=int, default=4, show_default=True)
@click.option("--subcarriers", "-m", type=int, default=16, show_default=True)
@click.option("--slots", "-n", type=int, default=6, show_default=True)
@click.option("--pmax-dbm", type=float, default=35.0, show_default=True)
@click.option("--bits", type=int, default=32, show_default=True)
@click.option("--eps", type=float, default=1e-7, show_default=True)
@click.option("--delays", default=None,
              help="Comma list of per-user delay slots (default: frame length).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scheme", type=click.Choice([s.value for s in SchemeId]),
              default="proposed", show_default=True)
@click.option("--json-out", type=click.Path(dir_okay=False), default=None,
              help="Also dump instance and report as JSON.")
def solve_one(users, subcarriers, slots, pmax_dbm, bits, eps, delays, seed,
              scheme, json_out):
    """Solve one random instance and print the report."""
    from .fbl import UserBitBudget
    from .model import check_feasible

    if delays:
        dvals = tuple(int(v) for v in delays.split(","))
        if len(dvals) != users:
            raise click.ClickException(f"need {users} delay entries")
    else:
        dvals = (slots,) * users
    try:
        qos = tuple(UserBitBudget(bits, eps, d) for d in dvals)
        inst = generate_instance(
            ChannelGenSpec(rng_seed=seed), (users, subcarriers, slots),
            pmax_dbm, qos, seed=seed)
        rep = run_scheme(scheme, inst)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"scheme            : {scheme}")
    click.echo(f"feasible          : {rep.feasible}")
    click.echo(f"throughput        : {rep.metric:.6f} bits/s/Hz")
    click.echo(f"iterations        : {rep.iterations_used}")
    click.echo(f"relaxation gap    : {rep.relaxation_gap:.3e}")
    click.echo(f"wall time         : {rep.wall_time:.3f} s")
    if rep.objective_trace:
        click.echo("objective trace   : "
                   + ", ".join(f"{v:.4f}" for v in rep.objective_trace))
    if rep.feasible:
        audit = check_feasible(inst, rep.final_alloc,
                               shannon=(scheme == "upper_bound"))
        click.echo("per-user bits     : "
                   + ", ".join(f"{b:.2f}" for b in audit.per_user_bits))
        click.echo(f"assigned REs      : {int(rep.final_alloc.assign.sum())}"
                   f" / {subcarriers * slots}")
    if json_out:
        payload = {
            "instance": json.loads(inst.to_json()),
            "report": {
                "scheme": scheme,
                "feasible": rep.feasible,
                "metric": rep.metric,
                "objective_trace": rep.objective_trace,
                "iterations_used": rep.iterations_used,
                "relaxation_gap": rep.relaxation_gap,
                "wall_time": rep.wall_time,
                "status": rep.status,
            },
        }
        with open(json_out, "w") as fh:
            json.dump(payload, fh, indent=2)
        click.echo(f"wrote {json_out}")


@main.command("oracle-check")
@click.option("--instances", type=int, default=10, show_default=True)
@click.option("--users", "-k", type=int, default=2, show_default=True)
@click.option("--subcarriers", "-m", type=int, default=2, show_default=True)
@click.option("--slots", "-n", type=int, default=1, show_default=True)
@click.option("--pmax-dbm", type=float, default=33.0, show_default=True)
@click.option("--bits", type=int, default=4, show_default=True)
@click.option("--eps", type=float, default=1e-6, show_default=True)
@click.option("--grid", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def oracle_check(instances, users, subcarriers, slots, pmax_dbm, bits, eps,
                 grid, seed):
    """Compare the solver against the exhaustive oracle on tiny instances."""
    from .fbl import UserBitBudget

    qos = tuple(UserBitBudget(bits, eps, slots) for _ in range(users))
    violations = 0
    click.echo(f"{'inst':>4} {'proposed':>10} {'oracle':>10} {'ratio':>7}")
    for i in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        try:
            inst = generate_instance(ChannelGenSpec(),
                                     (users, subcarriers, slots),
                                     pmax_dbm, qos, rng)
            rep = run_scheme("proposed", inst)
            orc = oracle_solve(inst, grid=grid)
        except ValueError as exc:
            raise click.ClickException(str(exc))
        ratio = rep.metric / orc.metric if orc.metric > 0 else float("nan")
        note = ""
        if rep.feasible and not orc.feasible:
            note = "  <-- solver claims feasibility the oracle disproves"
            violations += 1
        click.echo(f"{i:>4} {rep.metric:>10.4f} {orc.metric:>10.4f} "
                   f"{ratio:>7.4f}{note}")
    if violations:
        click.echo(f"{violations} violations", err=True)
        sys.exit(1)
    click.echo("no violations")


if __name__ == "__main__":
    main()
