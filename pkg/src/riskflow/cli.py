"""Command-line entry point: ``riskflow <subcommand> [--config run.json] [flags]``.

Each subcommand reads a JSON config whose keys match its flags (underscored);
flags given on the command line override the config. Paths inside a config
file resolve relative to that file. Errors print a single
``error: <code>: <message>`` line on stderr and exit with 2 (validation,
config or unreadable input), 3 (CFL violation) or 4 (output I/O).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from riskflow import agents as ag
from riskflow import continuity as cont
from riskflow import cycle as cyc
from riskflow import transactions as tx
from riskflow import transitions as tr
from riskflow.domain import (
    Grid,
    ScalarField,
    VectorField,
    fmt,
    mean_risk_of_field,
    parse_scalar_field_csv,
    scalar_field_csv,
    vector_field_csv,
)
from riskflow.errors import ConfigError, InvalidParams, IOFailure, RiskflowError
from riskflow.svg import line_chart

THREADS_ENV = "RISKFLOW_THREADS"


@dataclass(frozen=True)
class Param:
    name: str
    kind: Callable[[Any], Any]
    default: Any
    help: str
    path: bool = False


def _json_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {text!r} ({exc.msg})") from None


def _as_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("1", "true", "yes"):
        return True
    if isinstance(v, str) and v.lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _as_int(v: Any) -> int:
    if isinstance(v, bool):
        raise ConfigError(f"expected an integer, got {v!r}")
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, (int, str)):
        try:
            return int(v)
        except ValueError:
            pass
    raise ConfigError(f"expected an integer, got {v!r}")


def _as_float(v: Any) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {v!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"expected a finite number, got {v!r}")
    return x


def _as_str(v: Any) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}")
    return v


def _as_json(v: Any) -> Any:
    return _json_value(v) if isinstance(v, str) else v


SEED = Param("seed", _as_int, 0, "random seed [-]")

CYCLE_PARAMS = [
    Param("s0", _as_float, 1.0, "base supply S0 > 0 [supply units]"),
    Param("d0", _as_float, 1.0, "base demand D0 > 0 [demand units]"),
    Param("alpha", _as_float, 1.0, "supply-velocity coupling alpha > 0 [1/time^2 scale]"),
    Param("beta", _as_float, -1.0, "demand-velocity coupling beta < 0 [1/time^2 scale]"),
    Param("a", _as_float, None, "supply-disturbance coupling a (default alpha) [1/time]"),
    Param("b", _as_float, None, "demand-disturbance coupling b (default beta) [1/time]"),
    Param("vs0", _as_float, 0.05, "amplitude of the supply-velocity integral [risk/time]"),
    Param("vsx0", _as_float, 0.1, "amplitude of its first x-moment [risk/time]"),
    Param("vsx20", _as_float, 0.08, "amplitude of its second x-moment [risk/time]"),
    Param("f_const", _as_float, 0.0, "integration constant of the supply first moment [-]"),
    Param("g_const", _as_float, 0.0, "integration constant of the demand first moment [-]"),
    Param("dt", _as_float, 1e-3, "time step [time units]"),
    Param("t_end", _as_float, 6.283185307179586, "end time [time units]"),
    Param("mode", _as_str, "moments", "'moments' (RK4 on moment ODEs) or 'spatial' (PDE on a grid) [-]"),
    Param("m", _as_int, 200, "cells for --mode spatial [cells]"),
    Param("out", _as_str, None, "output trace CSV path [path]", path=True),
    Param("summary", _as_str, None, "JSON summary path (default: --out with .json) [path]", path=True),
    Param("svg", _as_str, None, "optional SVG chart of s, d, x_s, x_d [path]", path=True),
    SEED,
]

SIMULATE_PARAMS = [
    Param("n", _as_int, 1, "number of risk axes [-]"),
    Param("m", _as_int, 20, "grid cells per axis [cells]"),
    Param("agents", _as_int, 1000, "number of agents [agents]"),
    Param("positions", _as_json, {"kind": "uniform"},
          "initial positions, JSON {kind: uniform|gaussian, mean, sigma} [risk grade]"),
    Param("variables", _as_json, {"A": {"kind": "constant", "value": 1.0}},
          "tracked variables, JSON {name: {kind: constant|uniform, ...}} [variable units]"),
    Param("matrix", _as_str, None, "transition matrix CSV used for every axis [path]", path=True),
    Param("matrices", _as_json, None, "JSON list of per-axis transition matrix CSVs [paths]", path=True),
    Param("horizon", _as_float, None, "override of the matrix horizon T [years]"),
    Param("renormalize", _as_bool, False, "rescale matrix rows to sum to one [-]"),
    Param("velocity_mode", _as_str, "mean", "agent velocity: mean | field | jump [-]"),
    Param("boundary", _as_str, "clamp", "domain boundary: clamp | reflect [-]"),
    Param("window", _as_int, 1, "averaging window length in steps [steps]"),
    Param("mean_risk_from", _as_str, "field",
          "macro series from the averaged 'field' or exact 'agents' coordinates [-]"),
    Param("dt", _as_float, 0.1, "time step [years]"),
    Param("steps", _as_int, 100, "number of steps [steps]"),
    Param("snapshot_every", _as_int, 0, "write field snapshots every k steps, 0 = never [steps]"),
    Param("out_dir", _as_str, None, "output directory [path]", path=True),
    SEED,
]

PDE_PARAMS = [
    Param("n", _as_int, 1, "number of risk axes [-]"),
    Param("m", _as_int, 100, "grid cells per axis [cells]"),
    Param("dt", _as_float, 1e-3, "time step [time units]"),
    Param("t_end", _as_float, 1.0, "end time [time units]"),
    Param("steps", _as_int, None, "number of steps; overrides t_end [steps]"),
    Param("initial", _as_json, {"kind": "gaussian", "center": 0.3, "sigma": 0.05, "mass": 1.0},
          "initial field, JSON {kind: gaussian|uniform|csv, ...} [variable units per volume]"),
    Param("velocity", _as_json, 0.2, "constant velocity, number or list per axis [risk/time]"),
    Param("source", _as_float, 0.0, "uniform source rate F [variable units per volume per time]"),
    Param("snapshot_every", _as_int, 0, "write field snapshots every k steps, 0 = never [steps]"),
    Param("out_dir", _as_str, None, "output directory [path]", path=True),
    SEED,
]

TRANSACTIONS_PARAMS = [
    Param("trades", _as_str, None, "trade list CSV [path]", path=True),
    Param("m", _as_int, 10, "grid cells per axis of each side [cells]"),
    Param("out_dir", _as_str, None, "output directory [path]", path=True),
    SEED,
]

TRANSITIONS_PARAMS = [
    Param("matrix", _as_str, None, "transition matrix CSV [path]", path=True),
    Param("horizon", _as_float, None, "override of the matrix horizon T [years]"),
    Param("renormalize", _as_bool, False, "rescale matrix rows to sum to one [-]"),
    Param("m", _as_int, 0, "also sample the velocity field on m cells, 0 = skip [cells]"),
    Param("out", _as_str, None, "grade velocity CSV path [path]", path=True),
    Param("field_out", _as_str, None, "velocity field CSV path (needs --m) [path]", path=True),
    SEED,
]

AGGREGATE_PARAMS = [
    Param("snapshot", _as_str, None, "population snapshot CSV [path]", path=True),
    Param("variable", _as_str, None, "variable to aggregate [-]"),
    Param("m", _as_int, 10, "grid cells per axis [cells]"),
    Param("out", _as_str, None, "field CSV path [path]", path=True),
    Param("flow_out", _as_str, None, "optional flow field CSV path [path]", path=True),
    SEED,
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message.replace("\n", " "))


# --- io helpers ----------------------------------------------------------------

def read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc.strerror or exc}", exit_status=2) from None


def write_text(path: str | Path, text: str) -> None:
    p = Path(path)
    try:
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def _clean(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def dump_json(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _require(cfg: dict, *names: str) -> None:
    for name in names:
        if cfg.get(name) is None:
            raise ConfigError(f"missing required parameter {name!r} (--{name.replace('_', '-')})")


def _positive(cfg: dict, *names: str) -> None:
    for name in names:
        if not cfg[name] > 0:
            raise InvalidParams(f"{name} must be positive, got {cfg[name]}")


def load_config(params: Sequence[Param], ns: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config and command-line flags (flags win)."""
    cfg: dict[str, Any] = {}
    base = Path.cwd()
    if ns.config is not None:
        text = read_text(ns.config)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ns.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{ns.config}: top level must be a JSON object")
        known = {p.name for p in params}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg_dir = Path(ns.config).parent
        for p in params:
            if p.name in doc and doc[p.name] is not None:
                v = p.kind(doc[p.name])
                cfg[p.name] = _resolve(v, cfg_dir) if p.path else v
    for p in params:
        flag = getattr(ns, p.name)
        if flag is not None:
            v = p.kind(flag)
            cfg[p.name] = _resolve(v, base) if p.path else v
        cfg.setdefault(p.name, p.default)
    return cfg


def _resolve(v: Any, base: Path) -> Any:
    if isinstance(v, list):
        return [_resolve(x, base) for x in v]
    if not isinstance(v, str):
        raise ConfigError(f"expected a path, got {v!r}")
    p = Path(v)
    return str(p if p.is_absolute() else base / p)


# --- cycle ---------------------------------------------------------------------

def run_cycle(cfg: dict) -> None:
    _require(cfg, "out")
    params = cyc.CycleParams(
        s0=cfg["s0"], d0=cfg["d0"], alpha=cfg["alpha"], beta=cfg["beta"], a=cfg["a"], b=cfg["b"],
        vs0=cfg["vs0"], vsx0=cfg["vsx0"], vsx20=cfg["vsx20"],
        f_const=cfg["f_const"], g_const=cfg["g_const"],
    )
    _positive(cfg, "dt")
    if cfg["t_end"] < 0:
        raise InvalidParams(f"t_end must be nonnegative, got {cfg['t_end']}")
    if cfg["mode"] not in ("moments", "spatial"):
        raise InvalidParams(f"mode must be 'moments' or 'spatial', got {cfg['mode']!r}")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", cyc.LinearRegimeWarning)
        if cfg["mode"] == "spatial":
            if cfg["m"] < 2:
                raise InvalidParams(f"m must be >= 2, got {cfg['m']}")
            trace = cyc.spatial_cycle(params, cfg["m"], cfg["dt"], cfg["t_end"]).trace
        else:
            trace = cyc.integrate_cycle(params, cfg["dt"], cfg["t_end"])
    notes = [str(w.message) for w in caught if issubclass(w.category, cyc.LinearRegimeWarning)]

    analytic = cyc.analytic_states(params, trace.times)
    summary: dict[str, Any] = {
        "mode": cfg["mode"],
        "rows": int(trace.times.size),
        "omega_analytic": params.omega,
        "max_abs_err_vs_analytic": float(np.max(np.abs(trace.states - analytic))),
        "warnings": notes,
    }
    for name in ("s", "d", "x_s", "x_d"):
        try:
            summary[f"omega_estimated_{name}"] = cyc.estimate_frequency(trace.series(name), trace.times)
        except RiskflowError:
            summary[f"omega_estimated_{name}"] = None

    out = Path(cfg["out"])
    write_text(out, trace.to_csv())
    write_text(cfg["summary"] or out.with_suffix(".json"), dump_json(summary))
    if cfg["svg"]:
        chart = line_chart(
            trace.times,
            {k: trace.series(k) for k in ("s", "d", "x_s", "x_d")},
            title=f"supply-demand cycle, omega = {fmt(params.omega)}",
        )
        write_text(cfg["svg"], chart)
    for note in notes:
        print(f"warning: linear-regime: {note}", file=sys.stderr)


# --- simulate ------------------------------------------------------------------

def _load_matrix(path: str, horizon: float | None, renormalize: bool) -> tr.TransitionMatrix:
    text = read_text(path)
    try:
        return tr.parse_transition_csv(text, horizon=horizon, renormalize=renormalize)
    except RiskflowError as exc:
        exc.args = (f"{path}: {exc}",)
        raise


def _macro_row(field: ScalarField, flow: VectorField) -> tuple[float, np.ndarray, np.ndarray]:
    n = field.grid.n
    total = float(np.sum(field.values))
    if total > 0:
        risk = mean_risk_of_field(field)
        vel = flow.vectors.reshape(-1, n).sum(axis=0) / total
    else:
        risk = np.full(n, np.nan)
        vel = np.full(n, np.nan)
    return total, risk, vel


def _agent_row(pop: ag.Population, name: str) -> tuple[float, np.ndarray, np.ndarray]:
    try:
        ms = ag.macro_of(pop, name)
    except ZeroDivisionError:
        return 0.0, np.full(pop.n, np.nan), np.full(pop.n, np.nan)
    return ms.total, ms.mean_risk, ms.velocity


def run_simulate(cfg: dict) -> None:
    _require(cfg, "out_dir")
    n, m = cfg["n"], cfg["m"]
    if n < 1 or m < 2:
        raise InvalidParams(f"need n >= 1 and m >= 2, got n={n}, m={m}")
    _positive(cfg, "dt", "window")
    if cfg["agents"] < 0 or cfg["steps"] < 0 or cfg["snapshot_every"] < 0:
        raise InvalidParams("agents, steps and snapshot_every must be nonnegative")
    if cfg["velocity_mode"] not in ag.VELOCITY_MODES:
        raise InvalidParams(f"velocity_mode must be one of {ag.VELOCITY_MODES}")
    if cfg["boundary"] not in ag.BOUNDARIES:
        raise InvalidParams(f"boundary must be one of {ag.BOUNDARIES}")
    if not isinstance(cfg["variables"], dict) or not cfg["variables"]:
        raise ConfigError("variables must be a non-empty JSON object")
    if cfg["mean_risk_from"] not in ("field", "agents"):
        raise InvalidParams("mean_risk_from must be 'field' or 'agents'")
    if not isinstance(cfg["positions"], dict):
        raise ConfigError("positions must be a JSON object")

    if cfg["matrices"] is not None:
        if cfg["matrix"] is not None:
            raise ConfigError("give either matrix or matrices, not both")
        if not isinstance(cfg["matrices"], list) or len(cfg["matrices"]) != n:
            raise ConfigError(f"matrices must list one CSV path per axis ({n})")
        paths = cfg["matrices"]
    elif cfg["matrix"] is not None:
        paths = [cfg["matrix"]] * n
    else:
        raise ConfigError("missing required parameter 'matrix' (--matrix)")
    cache: dict[str, tr.TransitionMatrix] = {}
    for p in paths:
        if p not in cache:
            cache[p] = _load_matrix(p, cfg["horizon"], cfg["renormalize"])
    mats = [cache[p] for p in paths]

    grid = Grid(n, m)
    pop = ag.random_population(cfg["agents"], n, cfg["seed"], cfg["positions"], cfg["variables"])
    names = sorted(pop.variables)
    jump_rng = np.random.default_rng([cfg["seed"], 1])
    mode, dt = cfg["velocity_mode"], cfg["dt"]
    pop = pop.replace(velocities=ag.matrix_velocities(mats, pop.positions, mode, jump_rng))

    windows = {k: (ag.AveragingWindow(cfg["window"]), ag.AveragingWindow(cfg["window"])) for k in names}
    rows: dict[str, list[str]] = {k: [] for k in names}
    first_last: dict[str, list] = {k: [] for k in names}
    out_dir = Path(cfg["out_dir"])

    def record(step: int) -> None:
        t = step * dt
        for k in names:
            wf, wp = windows[k]
            field = ag.aggregate_variable(pop, grid, k, wf)
            flow = ag.aggregate_flow(pop, grid, k, wp)
            if cfg["mean_risk_from"] == "agents":
                total, risk, vel = _agent_row(pop, k)
            else:
                total, risk, vel = _macro_row(field, flow)
            rows[k].append(",".join(fmt(v) for v in (t, total, *risk, *vel)))
            first_last[k].append((total, risk))
            if cfg["snapshot_every"] and step % cfg["snapshot_every"] == 0:
                write_text(out_dir / f"field_{k}_{step:06d}.csv", scalar_field_csv(field))

    record(0)
    horizons = np.array([mt.horizon for mt in mats])
    for step in range(1, cfg["steps"] + 1):
        pop = ag.step_population(pop, None, dt, cfg["boundary"])
        if mode == "jump":
            crossed = np.floor(step * dt / horizons + 1e-9) > np.floor((step - 1) * dt / horizons + 1e-9)
            if np.any(crossed):
                fresh = ag.matrix_velocities(mats, pop.positions, mode, jump_rng)
                vel = np.where(crossed[None, :], fresh, pop.velocities)
                pop = pop.replace(velocities=vel)
        else:
            pop = pop.replace(velocities=ag.matrix_velocities(mats, pop.positions, mode))
        record(step)

    header = ["t", "A"] + [f"X_{j + 1}" for j in range(n)] + [f"v_{j + 1}" for j in range(n)]
    summary: dict[str, Any] = {"agents": pop.count, "steps": cfg["steps"], "n": n, "m": m, "variables": {}}
    for k in names:
        write_text(out_dir / f"macro_{k}.csv", "\n".join([",".join(header), *rows[k]]) + "\n")
        (a0, x0), (a1, x1) = first_last[k][0], first_last[k][-1]
        summary["variables"][k] = {"A_initial": a0, "A_final": a1, "X_initial": x0, "X_final": x1}
    write_text(out_dir / "population_final.csv", ag.population_csv(pop))
    write_text(out_dir / "summary.json", dump_json(summary))


# --- pde -----------------------------------------------------------------------

def _initial_field(init: Any, grid: Grid) -> ScalarField:
    if not isinstance(init, dict):
        raise ConfigError("initial must be a JSON object with a 'kind'")
    kind = init.get("kind")
    if kind == "gaussian":
        sigma = _as_float(init.get("sigma", 0.05))
        if sigma <= 0:
            raise InvalidParams("gaussian sigma must be positive")
        return cont.gaussian_field(
            grid, init.get("center", 0.5), sigma, _as_float(init.get("mass", 1.0))
        )
    if kind == "uniform":
        return ScalarField(grid, np.full(grid.shape, _as_float(init.get("value", 1.0))), "A")
    if kind == "csv":
        if "path" not in init:
            raise ConfigError("initial kind 'csv' needs a 'path'")
        field = parse_scalar_field_csv(read_text(init["path"]), "A")
        if field.grid != grid:
            raise ConfigError(
                f"initial field grid n={field.grid.n}, m={field.grid.m} differs from n={grid.n}, m={grid.m}"
            )
        return field
    raise ConfigError(f"unknown initial kind {kind!r}")


def run_pde(cfg: dict) -> None:
    _require(cfg, "out_dir")
    n, m = cfg["n"], cfg["m"]
    if n < 1 or m < 2:
        raise InvalidParams(f"need n >= 1 and m >= 2, got n={n}, m={m}")
    _positive(cfg, "dt")
    if cfg["snapshot_every"] < 0:
        raise InvalidParams("snapshot_every must be nonnegative")
    dt = cfg["dt"]
    if cfg["steps"] is not None:
        if cfg["steps"] < 0:
            raise InvalidParams("steps must be nonnegative")
        t_end = cfg["steps"] * dt
    else:
        t_end = cfg["t_end"]
        if t_end < 0:
            raise InvalidParams("t_end must be nonnegative")
    grid = Grid(n, m)
    vel = cfg["velocity"]
    vel = [vel] * n if not isinstance(vel, list) else vel
    if len(vel) != n:
        raise ConfigError(f"velocity needs {n} components, got {len(vel)}")
    v = VectorField.constant(grid, [_as_float(c) for c in vel])
    initial = _initial_field(cfg["initial"], grid)
    source = None
    if cfg["source"] != 0.0:
        source = ScalarField(grid, np.full(grid.shape, cfg["source"]), "source")
    problem = cont.ContinuityProblem(initial, v, dt, t_end, source=source)
    keep = cfg["snapshot_every"] or max(problem.n_steps, 1)
    trace = cont.solve(problem, keep_every=keep)

    out_dir = Path(cfg["out_dir"])
    write_text(out_dir / "trace.csv", trace.to_csv())
    if cfg["snapshot_every"]:
        for t, f in zip(trace.field_times, trace.fields):
            step = int(round(t / dt))
            write_text(out_dir / f"field_{step:06d}.csv", scalar_field_csv(f))
    summary = {
        "steps": problem.n_steps,
        "dt": dt,
        "t_end": float(trace.times[-1]),
        "conservation_drift": trace.conservation_drift(),
        "total_initial": trace.total[0],
        "total_final": trace.total[-1],
        "mean_risk_initial": trace.mean_risk[0],
        "mean_risk_final": trace.mean_risk[-1],
    }
    write_text(out_dir / "summary.json", dump_json(summary))


# --- transactions --------------------------------------------------------------

def run_transactions(cfg: dict) -> None:
    _require(cfg, "trades", "out_dir")
    if cfg["m"] < 2:
        raise InvalidParams(f"m must be >= 2, got {cfg['m']}")
    trades = tx.parse_trades_csv(read_text(cfg["trades"]))
    if not trades:
        raise ConfigError("trade list is empty")
    n = trades[0].n
    side = Grid(n, cfg["m"])
    tf = tx.aggregate_trades(trades, side)
    out_dir = Path(cfg["out_dir"])
    summary = {
        "trades": len(trades),
        "n": n,
        "m": cfg["m"],
        "grid": tx.macro_transaction(tf).as_dict(),
        "exact": tx.exact_macro_transaction(trades).as_dict(),
    }
    write_text(out_dir / "summary.json", dump_json(summary))
    sold_u, sold_c = tx.marginal_sales(tf)
    bought_u, bought_c = tx.marginal_purchases(tf)
    write_text(out_dir / "sales_volume.csv", scalar_field_csv(sold_u))
    write_text(out_dir / "sales_value.csv", scalar_field_csv(sold_c))
    write_text(out_dir / "purchases_volume.csv", scalar_field_csv(bought_u))
    write_text(out_dir / "purchases_value.csv", scalar_field_csv(bought_c))


# --- transitions ---------------------------------------------------------------

def run_transitions(cfg: dict) -> None:
    _require(cfg, "matrix", "out")
    mat = _load_matrix(cfg["matrix"], cfg["horizon"], cfg["renormalize"])
    lines = ["grade_index,grade,mean_velocity"]
    for i, (g, v) in enumerate(zip(mat.grades, tr.mean_velocities(mat)), start=1):
        lines.append(f"{i},{fmt(g)},{fmt(v)}")
    write_text(cfg["out"], "\n".join(lines) + "\n")
    if cfg["field_out"]:
        if cfg["m"] < 2:
            raise InvalidParams("--field-out needs --m >= 2")
        write_text(cfg["field_out"], vector_field_csv(tr.velocity_field(mat, Grid(1, cfg["m"]))))


# --- aggregate -----------------------------------------------------------------

def run_aggregate(cfg: dict) -> None:
    _require(cfg, "snapshot", "variable", "out")
    if cfg["m"] < 2:
        raise InvalidParams(f"m must be >= 2, got {cfg['m']}")
    pop = ag.parse_population_csv(read_text(cfg["snapshot"]))
    if cfg["variable"] not in pop.variables:
        raise ConfigError(f"snapshot has no variable {cfg['variable']!r}")
    grid = Grid(pop.n, cfg["m"])
    write_text(cfg["out"], scalar_field_csv(ag.aggregate_variable(pop, grid, cfg["variable"])))
    if cfg["flow_out"]:
        write_text(cfg["flow_out"], vector_field_csv(ag.aggregate_flow(pop, grid, cfg["variable"])))


COMMANDS: dict[str, tuple[list[Param], Callable[[dict], None], str]] = {
    "cycle": (CYCLE_PARAMS, run_cycle, "supply-demand cycle: moment ODEs or spatial PDE"),
    "simulate": (SIMULATE_PARAMS, run_simulate, "agent population driven by transition matrices"),
    "pde": (PDE_PARAMS, run_pde, "continuity-equation solve with a constant velocity"),
    "transactions": (TRANSACTIONS_PARAMS, run_transactions, "macro quantities of a trade list"),
    "transitions": (TRANSITIONS_PARAMS, run_transitions, "mean velocities of a transition matrix"),
    "aggregate": (AGGREGATE_PARAMS, run_aggregate, "grid a population snapshot into fields"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskflow", description="Risk-domain macro-economic modelling tools.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (params, _, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", default=None, help="JSON config; flags override its keys [path]")
        for p in params:
            default = "" if p.default is None else f" (default: {json.dumps(p.default)})"
            sp.add_argument(
                "--" + p.name.replace("_", "-"), dest=p.name, default=None, help=p.help + default
            )
    return parser


def _check_threads() -> None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        _check_threads()
        params, runner, _ = COMMANDS[ns.command]
        cfg = load_config(params, ns)
        runner(cfg)
    except RiskflowError as exc:
        return _fail(exc.code, str(exc), exc.exit_status)
    except (ValueError, ZeroDivisionError, IndexError) as exc:
        return _fail("invalid-params", str(exc), 2)
    return 0


def _fail(code: str, message: str, status: int) -> int:
    message = " ".join(message.split())
    print(f"error: {code}: {message}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
