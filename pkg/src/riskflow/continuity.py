"""Finite-volume solver for continuity equations of variables and their flows.

Evolves ``dA/dt + div(A v) = F_A`` and, per component,
``dP/dt + div(P v) = F_P`` on the unit cube. Face velocities are the mean of
the two adjacent cells, the transported quantity is taken from the upwind
cell, and boundary faces carry no flux, so without sources the domain
integral is conserved up to rounding. Time stepping is explicit Euler;
time-dependent inputs are sampled at the start of each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import math

import numpy as np
from numpy.typing import NDArray

from riskflow.domain import (
    Grid,
    ScalarField,
    VectorField,
    face_flux_difference,
    fmt,
    interior_face_average,
)
from riskflow.errors import CFLViolation, GridMismatch

CFL_LIMIT = 0.5
VELOCITY_FLOOR = 1e-12

ScalarInput = Union[None, ScalarField, Callable[[float], ScalarField]]
VectorInput = Union[None, VectorField, Callable[[float], VectorField]]


def check_cfl(v: VectorField, dt: float) -> None:
    """Raise :class:`CFLViolation` unless ``dt * max|v| <= 0.5 * h``.

    ``|v|`` is the per-cell L1 norm, which keeps the update monotone in any
    dimension.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    speed = v.max_speed()
    if dt * speed > CFL_LIMIT * v.grid.h * (1 + 1e-12):
        raise CFLViolation(
            f"dt={dt!r} exceeds CFL bound {CFL_LIMIT} * h / max|v| = "
            f"{CFL_LIMIT * v.grid.h / speed!r}"
        )


def _upwind_divergence(q: NDArray, v: NDArray, h: float) -> NDArray:
    """``div(q v)`` with upwinded q on interior faces, zero boundary flux."""
    div = np.zeros(q.shape)
    for axis in range(v.shape[-1]):
        vf = interior_face_average(v[..., axis], axis)
        lo = [slice(None)] * q.ndim
        hi = [slice(None)] * q.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        q_up = np.where(vf > 0, q[tuple(lo)], q[tuple(hi)])
        div += face_flux_difference(q_up * vf, axis, h)
    return div


def step_variable(
    A: ScalarField, v: VectorField, F_A: ScalarField | None, dt: float
) -> ScalarField:
    """One explicit upwind step of ``dA/dt + div(A v) = F_A``."""
    if A.grid != v.grid:
        raise GridMismatch("variable and velocity live on different grids")
    check_cfl(v, dt)
    new = A.values - dt * _upwind_divergence(A.values, v.vectors, A.grid.h)
    if F_A is not None:
        if F_A.grid != A.grid:
            raise GridMismatch("source lives on a different grid")
        new = new + dt * F_A.values
    return ScalarField(A.grid, new, A.name, A.unit)


def step_flow(
    P: VectorField, v: VectorField, F_P: VectorField | None, dt: float
) -> VectorField:
    """One explicit upwind step of ``dP/dt + div(P v) = F_P``, componentwise."""
    if P.grid != v.grid:
        raise GridMismatch("flow and velocity live on different grids")
    check_cfl(v, dt)
    h = P.grid.h
    new = np.empty_like(P.vectors)
    for c in range(P.grid.n):
        new[..., c] = P.vectors[..., c] - dt * _upwind_divergence(P.vectors[..., c], v.vectors, h)
    if F_P is not None:
        if F_P.grid != P.grid:
            raise GridMismatch("flow source lives on a different grid")
        new = new + dt * F_P.vectors
    return VectorField(P.grid, new, P.name)


def velocity_from_flow(A: ScalarField, P: VectorField) -> VectorField:
    """``v = P / A`` per cell, zero where ``A < 1e-12 * max A``."""
    a = A.values
    floor = VELOCITY_FLOOR * float(np.max(np.abs(a))) if a.size else 0.0
    ok = a >= floor
    if floor == 0.0:
        ok = a > 0
    v = np.zeros_like(P.vectors)
    v[ok] = P.vectors[ok] / a[ok][..., None]
    return VectorField(A.grid, v, "velocity")


def _at(x, t):
    return x(t) if callable(x) else x


@dataclass
class ContinuityProblem:
    """Initial field, prescribed velocity and sources, and the time grid.

    ``velocity``, ``source`` and ``flow_source`` are fields or callables of
    time returning fields. When ``flow_source`` is given the flow is evolved
    alongside the variable; with ``coevolve_velocity`` the velocity for every
    step after the first is recovered from the evolved flow as ``P / A``.
    The CFL bound is checked at construction for every step time.
    """

    initial: ScalarField
    velocity: VectorField | Callable[[float], VectorField]
    dt: float
    t_end: float
    source: ScalarInput = None
    flow_source: VectorInput = None
    coevolve_velocity: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.t_end >= 0:
            raise ValueError("need dt > 0 and t_end >= 0")
        if self.coevolve_velocity and self.flow_source is None:
            raise ValueError("coevolve_velocity needs a flow_source")
        for t in self.times()[:-1] if callable(self.velocity) else [0.0]:
            v = _at(self.velocity, t)
            if v.grid != self.initial.grid:
                raise GridMismatch("velocity lives on a different grid")
            check_cfl(v, self.dt)

    @property
    def grid(self) -> Grid:
        return self.initial.grid

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    def times(self) -> NDArray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class SolutionTrace:
    """Fields and domain-wide series at every recorded step.

    ``fields``/``flows`` hold every ``keep_every``-th snapshot (with their
    times in ``field_times``); the macro series cover every step.
    ``source_total`` is the domain integral of the source at each time.
    """

    times: NDArray
    total: NDArray
    flow: NDArray
    velocity: NDArray
    mean_risk: NDArray
    source_total: NDArray
    field_times: NDArray
    fields: list[ScalarField] = field(default_factory=list)
    flows: list[VectorField] = field(default_factory=list)

    def conservation_drift(self) -> float:
        """Largest relative gap between A(t) and A(0) plus the integrated source."""
        dt = self.times[1] - self.times[0] if self.times.size > 1 else 0.0
        budget = self.total[0] + dt * np.concatenate([[0.0], np.cumsum(self.source_total[:-1])])
        gap = np.abs(self.total - budget)
        scale = abs(self.total[0]) or 1.0
        return float(np.max(gap) / scale)

    def to_csv(self) -> str:
        n = self.flow.shape[1]
        header = (
            ["t", "A"]
            + [f"P_{j + 1}" for j in range(n)]
            + [f"v_{j + 1}" for j in range(n)]
            + [f"X_{j + 1}" for j in range(n)]
        )
        lines = [",".join(header)]
        for k, t in enumerate(self.times):
            row = [t, self.total[k], *self.flow[k], *self.velocity[k], *self.mean_risk[k]]
            lines.append(",".join(fmt(x) for x in row))
        return "\n".join(lines) + "\n"


def _reduce(A: NDArray, P: NDArray, grid: Grid) -> tuple[float, NDArray, NDArray, NDArray]:
    dv = grid.cell_volume
    s = float(np.sum(A))
    total = s * dv
    flow = P.reshape(grid.size, grid.n).sum(axis=0) * dv
    if s != 0.0:
        risk = np.tensordot(A, grid.center_mesh(), axes=grid.n) / s
        vel = flow / total
    else:
        risk = np.full(grid.n, np.nan)
        vel = np.full(grid.n, np.nan)
    return total, flow, vel, risk


def solve(problem: ContinuityProblem, keep_every: int = 1) -> SolutionTrace:
    """Run the problem to ``t_end``, recording macro series at every step.

    Without ``flow_source`` the flow field is ``A * v`` from the current
    variable and velocity.
    """
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    g = problem.grid
    times = problem.times()
    A = problem.initial
    v = _at(problem.velocity, 0.0)
    evolve_flow = problem.flow_source is not None
    P = VectorField(g, A.values[..., None] * v.vectors, "flow")

    totals, flows, vels, risks, src = [], [], [], [], []
    kept_t, kept_A, kept_P = [], [], []

    for k, t in enumerate(times):
        if k > 0 and not problem.coevolve_velocity:
            v = _at(problem.velocity, t)
        if not evolve_flow:
            P = VectorField(g, A.values[..., None] * v.vectors, "flow")
        total, flow, vel, risk = _reduce(A.values, P.vectors, g)
        F = _at(problem.source, t)
        totals.append(total)
        flows.append(flow)
        vels.append(vel)
        risks.append(risk)
        src.append(float(np.sum(F.values)) * g.cell_volume if F is not None else 0.0)
        if k % keep_every == 0:
            kept_t.append(t)
            kept_A.append(A)
            kept_P.append(P)
        if k == len(times) - 1:
            break
        A_next = step_variable(A, v, F, problem.dt)
        if evolve_flow:
            P = step_flow(P, v, _at(problem.flow_source, t), problem.dt)
            if problem.coevolve_velocity:
                v = velocity_from_flow(A_next, P)
        A = A_next

    return SolutionTrace(
        times=times,
        total=np.array(totals),
        flow=np.array(flows),
        velocity=np.array(vels),
        mean_risk=np.array(risks),
        source_total=np.array(src),
        field_times=np.array(kept_t),
        fields=kept_A,
        flows=kept_P,
    )


def gaussian_field(grid: Grid, center, sigma: float, mass: float = 1.0) -> ScalarField:
    """Gaussian blob sampled at cell centers, scaled to integrate to ``mass``."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.n,))
    r2 = np.sum((grid.center_mesh() - c) ** 2, axis=-1)
    vals = np.exp(-0.5 * r2 / sigma**2)
    vals *= mass / (vals.sum() * grid.cell_volume)
    return ScalarField(grid, vals, "A")
