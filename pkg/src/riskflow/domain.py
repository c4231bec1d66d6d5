"""Grids, fields and reductions on the unit-cube economic domain [0, 1]^n.

Cells are uniform boxes of width ``h = 1/m`` stored densely in row-major
(C) order, the first risk axis varying slowest. Cell ``k`` along an axis
covers ``[k*h, (k+1)*h)``; the last cell is closed so that ``x = 1`` belongs
to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from riskflow.errors import DimensionMismatch, GridMismatch, ParseError, ZeroMass


def fmt(x: float) -> str:
    """Format a float with 17 significant digits (round-trips exactly)."""
    return format(float(x), ".17g")


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RiskPoint:
    """A position in the economic domain: one grade in [0, 1] per risk."""

    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in np.atleast_1d(self.coords))
        if len(coords) < 1:
            raise DimensionMismatch("a risk point needs at least one coordinate")
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise ValueError(f"risk coordinates must lie in [0, 1], got {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return len(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid with ``m`` cells on each of ``n`` axes."""

    n: int
    m: int

    def __post_init__(self):
        if int(self.n) < 1:
            raise DimensionMismatch(f"grid dimension must be >= 1, got {self.n}")
        if int(self.m) < 2:
            raise ValueError(f"grid needs m >= 2 cells per axis, got {self.m}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.n

    @property
    def size(self) -> int:
        return self.m**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def axis_centers(self) -> NDArray:
        return (np.arange(self.m) + 0.5) * self.h

    def center_mesh(self) -> NDArray:
        """Cell-center coordinates, shape ``grid.shape + (n,)``."""
        axes = [self.axis_centers()] * self.n
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_centers(self) -> NDArray:
        """Cell-center coordinates in row-major cell order, shape ``(m**n, n)``."""
        return self.center_mesh().reshape(self.size, self.n)

    def cell_multi_index(self, points: ArrayLike) -> NDArray:
        """Integer cell index per axis for each point, shape ``(N, n)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.n:
            raise DimensionMismatch(f"points have dimension {pts.shape[-1]}, grid has {self.n}")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("points must lie in the unit cube")
        k = np.floor(pts * self.m).astype(np.int64)
        return np.minimum(k, self.m - 1)

    def cell_index(self, points: ArrayLike) -> NDArray:
        """Flat row-major cell index for each point, shape ``(N,)``."""
        k = self.cell_multi_index(points)
        return np.ravel_multi_index(tuple(k.T), self.shape)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per cell, stored with shape ``grid.shape``."""

    grid: Grid
    values: NDArray
    name: str = ""
    unit: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise GridMismatch(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, grid: Grid, name: str = "", unit: str = "") -> "ScalarField":
        return cls(grid, np.zeros(grid.shape), name, unit)

    @classmethod
    def from_function(cls, grid: Grid, fn, name: str = "", unit: str = "") -> "ScalarField":
        """Sample ``fn(centers)`` where ``centers`` has shape ``grid.shape + (n,)``."""
        return cls(grid, fn(grid.center_mesh()), name, unit)

    def flat(self) -> NDArray:
        return self.values.reshape(-1)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values, self.name, self.unit)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * float(c), self.name, self.unit)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    """One n-vector per cell, stored with shape ``grid.shape + (n,)``."""

    grid: Grid
    vectors: NDArray
    name: str = ""

    def __post_init__(self):
        g = self.grid
        v = np.asarray(self.vectors, dtype=float)
        if v.size != g.size * g.n:
            raise GridMismatch(f"expected {g.size} vectors of length {g.n}, got {v.size} values")
        v = v.reshape(g.shape + (g.n,))
        if not np.all(np.isfinite(v)):
            raise ValueError("vector components must be finite")
        object.__setattr__(self, "vectors", _frozen(v))

    @classmethod
    def zeros(cls, grid: Grid, name: str = "") -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (grid.n,)), name)

    @classmethod
    def constant(cls, grid: Grid, v: Sequence[float], name: str = "") -> "VectorField":
        v = np.asarray(v, dtype=float).reshape(grid.n)
        return cls(grid, np.broadcast_to(v, grid.shape + (grid.n,)), name)

    def component(self, axis: int) -> NDArray:
        return self.vectors[..., axis]

    def max_speed(self) -> float:
        """Largest per-cell L1 norm of the velocity vector."""
        return float(np.max(np.sum(np.abs(self.vectors), axis=-1))) if self.grid.size else 0.0

    def sample(self, points: ArrayLike) -> NDArray:
        """Vector of the cell containing each point, shape ``(N, n)``."""
        idx = self.grid.cell_index(points)
        return self.vectors.reshape(self.grid.size, self.grid.n)[idx]


@dataclass(frozen=True)
class MacroState:
    """Domain-wide reduction of one variable.

    ``flow == total * velocity`` whenever ``total != 0``.
    """

    total: float
    flow: NDArray
    velocity: NDArray
    mean_risk: NDArray


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatch(f"grids differ: {a} vs {b}")


def integrate_field(field: ScalarField) -> float:
    """Midpoint quadrature of a scalar field over the unit cube."""
    return float(np.sum(field.values)) * field.grid.cell_volume


def mean_risk_of_field(field: ScalarField) -> NDArray:
    """Risk coordinate weighted by the field, using cell centers.

    Raises
    ------
    ZeroMass
        If the field integrates to zero.
    """
    vals = field.values
    if np.any(vals < 0):
        raise ValueError("mean risk requires a nonnegative field")
    total = float(np.sum(vals))
    if total == 0.0:
        raise ZeroMass(f"field {field.name or '<unnamed>'} has zero mass")
    centers = field.grid.center_mesh()
    weighted = np.tensordot(vals, centers, axes=field.grid.n)
    return weighted / total


def macro_flow(variable: ScalarField, velocity: VectorField) -> NDArray:
    """Domain integral of ``A(x) * v(x)``, one entry per axis."""
    _same_grid(variable.grid, velocity.grid)
    g = variable.grid
    flux = velocity.vectors * variable.values[..., None]
    return flux.reshape(g.size, g.n).sum(axis=0) * g.cell_volume


def macro_state(variable: ScalarField, velocity: VectorField) -> MacroState:
    """Total, flow, macro velocity and mean risk of a field pair."""
    total = integrate_field(variable)
    flow = macro_flow(variable, velocity)
    if total == 0.0:
        raise ZeroMass("macro velocity and mean risk undefined for zero total")
    return MacroState(total, flow, flow / total, mean_risk_of_field(variable))


def interior_face_average(q: NDArray, axis: int) -> NDArray:
    """Arithmetic mean of neighbouring cells along ``axis`` (the m-1 interior faces)."""
    lo = [slice(None)] * q.ndim
    hi = [slice(None)] * q.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (q[tuple(lo)] + q[tuple(hi)])


def face_flux_difference(face_flux: NDArray, axis: int, h: float) -> NDArray:
    """Per-cell ``(F_out - F_in) / h`` from interior-face fluxes.

    The two boundary faces on ``axis`` carry zero flux, so summing the result
    over all cells telescopes to exactly zero.
    """
    pad = [(0, 0)] * face_flux.ndim
    pad[axis] = (1, 1)
    full = np.pad(face_flux, pad)
    return np.diff(full, axis=axis) / h


def divergence_array(flow: NDArray, h: float) -> NDArray:
    """Conservative divergence of a cell-centred flow array ``(..., n)``."""
    n = flow.shape[-1]
    div = np.zeros(flow.shape[:-1])
    for axis in range(n):
        faces = interior_face_average(flow[..., axis], axis)
        div += face_flux_difference(faces, axis, h)
    return div


def divergence(flow: VectorField) -> ScalarField:
    """Finite-volume divergence with zero flux through the domain boundary.

    Face fluxes are the arithmetic mean of the two adjacent cell vectors.
    """
    return ScalarField(flow.grid, divergence_array(flow.vectors, flow.grid.h), name="divergence")


def scalar_field_csv(field: ScalarField) -> str:
    g = field.grid
    header = ["cell_index"] + [f"coord_{j + 1}" for j in range(g.n)] + ["value"]
    lines = [",".join(header)]
    for k, (c, v) in enumerate(zip(g.cell_centers(), field.flat())):
        lines.append(",".join([str(k), *(fmt(x) for x in c), fmt(v)]))
    return "\n".join(lines) + "\n"


def vector_field_csv(field: VectorField) -> str:
    g = field.grid
    header = (
        ["cell_index"] + [f"coord_{j + 1}" for j in range(g.n)] + [f"v_{j + 1}" for j in range(g.n)]
    )
    lines = [",".join(header)]
    vecs = field.vectors.reshape(g.size, g.n)
    for k, (c, v) in enumerate(zip(g.cell_centers(), vecs)):
        lines.append(",".join([str(k), *(fmt(x) for x in c), *(fmt(x) for x in v)]))
    return "\n".join(lines) + "\n"


def parse_scalar_field_csv(text: str, name: str = "") -> ScalarField:
    """Inverse of :func:`scalar_field_csv`; the grid is inferred from the row count."""
    rows = [(k + 1, r) for k, r in enumerate(text.splitlines()) if r.strip()]
    if not rows:
        raise ParseError("empty field file", 1)
    header = [h.strip() for h in rows[0][1].split(",")]
    n = len(header) - 2
    expected = ["cell_index"] + [f"coord_{j + 1}" for j in range(n)] + ["value"]
    if n < 1 or header != expected:
        raise ParseError(f"expected header {','.join(expected) if n >= 1 else 'cell_index,coord_1,value'}", 1)
    values = []
    for ln, raw in rows[1:]:
        cells = raw.split(",")
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(cells)}", ln)
        try:
            values.append(float(cells[-1]))
        except ValueError:
            raise ParseError(f"not a number: {cells[-1].strip()!r}", ln, len(cells)) from None
    m = round(len(values) ** (1.0 / n))
    if m < 2 or m**n != len(values):
        raise ParseError(f"{len(values)} rows do not form an m**{n} grid with m >= 2", len(rows))
    return ScalarField(Grid(n, m), np.array(values), name)
