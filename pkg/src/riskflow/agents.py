"""Agent populations moving in the economic domain and their aggregation.

A :class:`Population` is stored column-wise (ids, positions, velocities and
one amount array per named variable); :attr:`Population.agents` gives the
row view as :class:`Agent` records.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from riskflow.domain import Grid, MacroState, ScalarField, VectorField, fmt
from riskflow.errors import ConfigError, DimensionMismatch, ParseError, ZeroMass
from riskflow.transitions import (
    TransitionMatrix,
    mean_velocities,
    sample_targets,
    velocity_at,
)

BOUNDARIES = ("clamp", "reflect")


@dataclass
class Agent:
    id: int
    position: NDArray
    velocity: NDArray
    variables: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Population:
    ids: NDArray
    positions: NDArray
    velocities: NDArray
    variables: Mapping[str, NDArray]
    rng_seed: int = 0

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        N = ids.size
        pos = np.asarray(self.positions, dtype=float)
        pos = pos.reshape(N, pos.shape[-1] if N == 0 and pos.ndim == 2 else -1)
        vel = np.asarray(self.velocities, dtype=float).reshape(pos.shape)
        if np.unique(ids).size != N:
            raise ValueError("agent ids must be unique")
        if N and (pos.shape[1] < 1 or np.any(pos < 0.0) or np.any(pos > 1.0)):
            raise ValueError("agent positions must lie in the unit cube")
        if not np.all(np.isfinite(vel)):
            raise ValueError("agent velocities must be finite")
        variables = {}
        for name, amounts in self.variables.items():
            a = np.asarray(amounts, dtype=float).reshape(-1)
            if a.size != N or not np.all(np.isfinite(a)):
                raise ValueError(f"variable {name!r} needs {N} finite amounts")
            variables[name] = a
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "variables", variables)

    @classmethod
    def from_agents(cls, agents: Sequence[Agent], n: int | None = None, rng_seed: int = 0):
        if not agents:
            n = n or 1
            return cls(np.zeros(0), np.zeros((0, n)), np.zeros((0, n)), {}, rng_seed)
        names = sorted({k for a in agents for k in a.variables})
        return cls(
            ids=[a.id for a in agents],
            positions=[np.atleast_1d(a.position) for a in agents],
            velocities=[np.atleast_1d(a.velocity) for a in agents],
            variables={k: [a.variables.get(k, 0.0) for a in agents] for k in names},
            rng_seed=rng_seed,
        )

    @property
    def count(self) -> int:
        return self.ids.size

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def agents(self) -> list[Agent]:
        return [
            Agent(
                int(self.ids[i]),
                self.positions[i].copy(),
                self.velocities[i].copy(),
                {k: float(v[i]) for k, v in self.variables.items()},
            )
            for i in range(self.count)
        ]

    def amounts(self, name: str) -> NDArray:
        """Amounts of ``name``; a variable the agents do not carry reads as zero."""
        return self.variables.get(name, np.zeros(self.count))

    def replace(self, **changes) -> "Population":
        kw = dict(
            ids=self.ids,
            positions=self.positions,
            velocities=self.velocities,
            variables=self.variables,
            rng_seed=self.rng_seed,
        )
        kw.update(changes)
        return Population(**kw)


class AveragingWindow:
    """Box average over the last ``span`` instantaneous snapshots.

    Before ``span`` snapshots exist the average runs over those available.
    """

    def __init__(self, span: int = 1):
        if int(span) < 1:
            raise ValueError(f"averaging span must be a positive integer, got {span}")
        self.span = int(span)
        self.buffer: deque[NDArray] = deque(maxlen=self.span)

    def push(self, snapshot: NDArray) -> NDArray:
        self.buffer.append(np.array(snapshot, dtype=float, copy=True))
        return self.average()

    def average(self) -> NDArray:
        if not self.buffer:
            raise ValueError("averaging window is empty")
        if len(self.buffer) == 1:
            return self.buffer[0].copy()
        total = self.buffer[0].copy()
        for snap in list(self.buffer)[1:]:
            total += snap
        return total / len(self.buffer)


def random_population(
    count: int,
    n: int,
    seed: int = 0,
    positions: Mapping | None = None,
    variables: Mapping[str, Mapping] | None = None,
) -> Population:
    """Seeded random population.

    ``positions`` is ``{"kind": "uniform"}`` or
    ``{"kind": "gaussian", "mean": [...], "sigma": [...]}`` (truncated to the
    unit cube by rejection). Each variable distribution is
    ``{"kind": "constant", "value": a}`` or ``{"kind": "uniform", "low": a, "high": b}``.
    """
    rng = np.random.default_rng(seed)
    positions = dict(positions or {"kind": "uniform"})
    kind = positions.get("kind", "uniform")
    if kind == "uniform":
        pos = rng.random((count, n))
    elif kind == "gaussian":
        mean = np.broadcast_to(np.asarray(positions.get("mean", 0.5), dtype=float), (n,))
        sigma = np.broadcast_to(np.asarray(positions.get("sigma", 0.1), dtype=float), (n,))
        if np.any(sigma <= 0):
            raise ConfigError("gaussian sigma must be positive")
        pos = np.empty((count, n))
        for j in range(n):
            col = np.empty(0)
            while col.size < count:
                draw = rng.normal(mean[j], sigma[j], size=2 * (count - col.size) + 16)
                col = np.concatenate([col, draw[(draw >= 0.0) & (draw <= 1.0)]])
            pos[:, j] = col[:count]
    else:
        raise ConfigError(f"unknown position distribution {kind!r}")

    amounts = {}
    for name, dist in (variables or {}).items():
        vkind = dist.get("kind", "constant")
        if vkind == "constant":
            amounts[name] = np.full(count, float(dist.get("value", 1.0)))
        elif vkind == "uniform":
            lo, hi = float(dist.get("low", 0.0)), float(dist.get("high", 1.0))
            if hi < lo:
                raise ConfigError(f"variable {name!r}: high < low")
            amounts[name] = rng.uniform(lo, hi, size=count)
        else:
            raise ConfigError(f"variable {name!r}: unknown kind {vkind!r}")
    return Population(np.arange(count), pos, np.zeros((count, n)), amounts, rng_seed=seed)


def step_population(
    pop: Population,
    velocity_source: VectorField | ArrayLike | None,
    dt: float,
    boundary: str = "clamp",
) -> Population:
    """Advance every agent by ``velocity * dt`` and keep it inside the unit cube.

    ``velocity_source`` is a shared field sampled at each agent's cell, an
    ``(N, n)`` array of per-agent velocities, or ``None`` to reuse the
    population's own velocities. With ``boundary="clamp"`` a component that
    hits a face is clamped there and its velocity set to zero; with
    ``"reflect"`` the overshoot is mirrored back and the velocity flips sign.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    if velocity_source is None:
        vel = pop.velocities.copy()
    elif isinstance(velocity_source, VectorField):
        vel = velocity_source.sample(pop.positions) if pop.count else pop.velocities.copy()
    else:
        vel = np.array(velocity_source, dtype=float).reshape(pop.positions.shape)

    x = pop.positions + vel * dt
    if boundary == "clamp":
        out = (x < 0.0) | (x > 1.0)
        x = np.clip(x, 0.0, 1.0)
        vel[out] = 0.0
    else:
        low, high = x < 0.0, x > 1.0
        x = np.where(low, -x, x)
        x = np.where(high, 2.0 - x, x)
        vel[low | high] *= -1.0
        x = np.clip(x, 0.0, 1.0)
    return pop.replace(positions=x, velocities=vel)


VELOCITY_MODES = ("mean", "field", "jump")


def matrix_velocities(
    matrices: Sequence[TransitionMatrix],
    positions: ArrayLike,
    mode: str = "mean",
    rng: np.random.Generator | None = None,
) -> NDArray:
    """Per-agent velocities from one transition matrix per axis.

    ``"mean"``: mean velocity of the nearest grade. ``"field"``: mean
    velocities interpolated between grades at the agent's coordinate.
    ``"jump"``: a destination grade is drawn from the nearest grade's row and
    the agent heads there at ``(g[j] - g[i]) / T``; callers redraw at horizon
    boundaries.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != len(matrices):
        raise DimensionMismatch(f"need one matrix per axis, got {len(matrices)} for n={pos.shape[-1]}")
    if mode not in VELOCITY_MODES:
        raise ConfigError(f"velocity mode must be one of {VELOCITY_MODES}, got {mode!r}")
    if mode == "jump" and rng is None:
        raise ValueError("jump mode needs an rng")
    vel = np.empty_like(pos)
    for j, mat in enumerate(matrices):
        x = pos[:, j]
        if mode == "field":
            vel[:, j] = velocity_at(mat, x)
            continue
        rows = mat.scale.nearest(x)
        if mode == "mean":
            vel[:, j] = mean_velocities(mat)[rows]
        else:
            targets = sample_targets(mat, rows, rng)
            vel[:, j] = (mat.grades[targets] - mat.grades[rows]) / mat.horizon
    return vel


def _scatter(grid: Grid, positions: NDArray, weights: NDArray) -> NDArray:
    """Per-cell sums, accumulated in agent order."""
    out = np.zeros((grid.size,) + weights.shape[1:])
    if positions.shape[0]:
        np.add.at(out, grid.cell_index(positions), weights)
    return out


def aggregate_variable(
    pop: Population, grid: Grid, name: str, window: AveragingWindow | None = None
) -> ScalarField:
    """Cell sums of ``name``, box-averaged over the window."""
    inst = _scatter(grid, pop.positions, pop.amounts(name)).reshape(grid.shape)
    vals = window.push(inst) if window is not None else inst
    return ScalarField(grid, vals, name=name)


def aggregate_flow(
    pop: Population, grid: Grid, name: str, window: AveragingWindow | None = None
) -> VectorField:
    """Cell sums of ``amount * velocity``, box-averaged over the window."""
    w = pop.amounts(name)[:, None] * pop.velocities
    inst = _scatter(grid, pop.positions, w).reshape(grid.shape + (grid.n,))
    vals = window.push(inst) if window is not None else inst
    return VectorField(grid, vals, name=f"flow_{name}")


def cell_sum(values: NDArray) -> NDArray:
    """Left-to-right sum over cells in row-major order (leading axes are cells)."""
    total = np.zeros(values.shape[-1:] if values.ndim > 1 else ())
    for v in values:
        total = total + v
    return total


def _ordered_sums(pop: Population, grid: Grid | None, w: NDArray) -> NDArray:
    """Sum of ``w`` over agents.

    Without a grid the sum is exactly rounded (``math.fsum`` semantics per
    component). With a grid the agents are grouped by cell, summed within
    each cell in agent order and the cell subtotals added in row-major order,
    which reproduces the floating-point result of aggregating first.
    """
    if grid is None:
        if w.ndim == 1:
            return np.array(math.fsum(w))
        return np.array([math.fsum(col) for col in w.T])
    cells = grid.cell_index(pop.positions) if pop.count else np.zeros(0, dtype=np.int64)
    order = np.argsort(cells, kind="stable")
    total = np.zeros(w.shape[1:])
    sub = np.zeros(w.shape[1:])
    current = None
    for i in order:
        c = cells[i]
        if c != current:
            if current is not None:
                total = total + sub
            sub = np.zeros(w.shape[1:])
            current = c
        sub = sub + w[i]
    if current is not None:
        total = total + sub
    return total


def macro_of(pop: Population, name: str, grid: Grid | None = None) -> MacroState:
    """Exact agent sums: total, flow, macro velocity and mean risk of ``name``.

    Pass ``grid`` to sum in the same order as :func:`aggregate_variable`, so
    that the total equals the cell sum of the aggregated field bit for bit.

    Raises
    ------
    ZeroMass
        If the amounts sum to zero.
    """
    a = pop.amounts(name)
    if np.any(a < 0):
        raise ValueError(f"mean risk of {name!r} needs nonnegative amounts")
    total = float(_ordered_sums(pop, grid, a))
    flow = _ordered_sums(pop, grid, a[:, None] * pop.velocities)
    if total == 0.0:
        raise ZeroMass(f"variable {name!r} sums to zero")
    moment = _ordered_sums(pop, grid, a[:, None] * pop.positions)
    return MacroState(total, flow, flow / total, moment / total)


def population_csv(pop: Population) -> str:
    n = pop.n
    names = sorted(pop.variables)
    header = (
        ["id"] + [f"x_{j + 1}" for j in range(n)] + [f"v_{j + 1}" for j in range(n)] + names
    )
    lines = [",".join(header)]
    for i in range(pop.count):
        row = [str(int(pop.ids[i]))]
        row += [fmt(x) for x in pop.positions[i]]
        row += [fmt(v) for v in pop.velocities[i]]
        row += [fmt(pop.variables[k][i]) for k in names]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def parse_population_csv(text: str) -> Population:
    """Parse ``id,x_1..x_n,v_1..v_n,<var>...`` snapshots."""
    lines = [(k + 1, ln) for k, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise ParseError("empty population file", 1)
    _, head = lines[0]
    header = [h.strip() for h in head.split(",")]
    if header[0] != "id":
        raise ParseError("first column must be 'id'", 1, 1)
    n = 0
    while 1 + n < len(header) and header[1 + n] == f"x_{n + 1}":
        n += 1
    if n == 0:
        raise ParseError("expected x_1 column", 1, 2)
    for j in range(n):
        if 1 + n + j >= len(header) or header[1 + n + j] != f"v_{j + 1}":
            raise ParseError(f"expected v_{j + 1} column", 1, 2 + n + j)
    names = header[1 + 2 * n :]
    rows = []
    for ln, raw in lines[1:]:
        cells = raw.split(",")
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(cells)}", ln)
        vals = []
        for c, cell in enumerate(cells):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"not a number: {cell.strip()!r}", ln, c + 1) from None
        rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return Population(
        ids=data[:, 0].astype(np.int64),
        positions=data[:, 1 : 1 + n],
        velocities=data[:, 1 + n : 1 + 2 * n],
        variables={k: data[:, 1 + 2 * n + i] for i, k in enumerate(names)},
    )
