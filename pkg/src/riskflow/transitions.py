"""Rating-transition matrices on numerical grades and the velocities they induce.

Grades are numbered 1..K as on a rating scale: ``displacement(m, i, j)``,
``pair_velocity`` and ``mean_velocity`` take these grade numbers, while the
arrays (``grades``, ``probs``, :func:`mean_velocities`) are ordinary numpy
arrays, so grade ``i`` sits at position ``i - 1``. Row ``i`` holds the
probabilities of migrating from grade ``i`` to every grade ``j`` over the
horizon ``T`` (years); migrating covers the displacement ``g_j - g_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from riskflow.domain import Grid, VectorField, fmt
from riskflow.errors import DimensionMismatch, IndexOutOfRange, ParseError, RowNotStochastic

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GradeScale:
    """Strictly increasing numerical grades in [0, 1]."""

    grades: NDArray

    def __post_init__(self):
        g = np.array(self.grades, dtype=float).reshape(-1)
        if g.size < 2:
            raise ValueError(f"a grade scale needs K >= 2 grades, got {g.size}")
        if not np.all(np.isfinite(g)) or g.min() < 0.0 or g.max() > 1.0:
            raise ValueError("grades must lie in [0, 1]")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grades must be strictly increasing")
        g.setflags(write=False)
        object.__setattr__(self, "grades", g)

    @property
    def K(self) -> int:
        return self.grades.size

    def nearest(self, x: ArrayLike) -> NDArray:
        """Array position (0-based) of the grade closest to each coordinate.

        Ties go to the lower grade.
        """
        x = np.asarray(x, dtype=float)
        g = self.grades
        hi = np.clip(np.searchsorted(g, x), 1, g.size - 1)
        lo = hi - 1
        return np.where(np.abs(x - g[lo]) <= np.abs(g[hi] - x), lo, hi)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic K x K migration probabilities over a horizon in years."""

    scale: GradeScale
    probs: NDArray
    horizon: float = 1.0

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        K = self.scale.K
        if p.shape != (K, K):
            raise DimensionMismatch(f"matrix must be {K}x{K}, got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("transition probabilities must lie in [0, 1]")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        for i, row in enumerate(p):
            deficit = 1.0 - float(np.sum(row))
            if abs(deficit) > ROW_SUM_TOL:
                raise RowNotStochastic(i + 1, deficit)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def K(self) -> int:
        return self.scale.K

    @property
    def grades(self) -> NDArray:
        return self.scale.grades

    def _pos(self, i: int) -> int:
        """Array position of grade number ``i`` (1..K)."""
        if isinstance(i, (bool, np.bool_)) or not isinstance(i, (int, np.integer)):
            raise IndexOutOfRange(f"grade index must be an integer, got {i!r}")
        if not 1 <= i <= self.K:
            raise IndexOutOfRange(f"grade index {i} outside 1..{self.K}")
        return int(i) - 1


def renormalize_rows(probs: ArrayLike) -> NDArray:
    """Rescale each row to sum to one (for rounded published matrices)."""
    p = np.asarray(probs, dtype=float)
    sums = p.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("cannot renormalize a row with zero total")
    return p / sums


def displacement(matrix: TransitionMatrix, i: int, j: int) -> float:
    """Grade distance ``g_j - g_i`` covered by a migration from grade i to grade j."""
    return float(matrix.grades[matrix._pos(j)] - matrix.grades[matrix._pos(i)])


def pair_velocity(matrix: TransitionMatrix, i: int, j: int) -> float:
    """Speed (grade per year) of a migration from i to j over the horizon."""
    return displacement(matrix, i, j) / matrix.horizon


def mean_velocity(matrix: TransitionMatrix, i: int) -> float:
    """Expected velocity of an agent at grade ``i`` under row ``i``."""
    k = matrix._pos(i)
    l = matrix.grades - matrix.grades[k]
    return float(np.dot(l, matrix.probs[k])) / matrix.horizon


def mean_velocities(matrix: TransitionMatrix) -> NDArray:
    """:func:`mean_velocity` for every grade, in grade order."""
    return np.array([mean_velocity(matrix, i) for i in range(1, matrix.K + 1)])


def velocity_at(matrix: TransitionMatrix, x: ArrayLike) -> NDArray:
    """Piecewise-linear interpolation of the grade mean velocities at ``x``.

    Flat extrapolation below the lowest and above the highest grade.
    """
    return np.interp(np.asarray(x, dtype=float), matrix.grades, mean_velocities(matrix))


def velocity_field(matrix: TransitionMatrix, grid: Grid) -> VectorField:
    """Mean-velocity field sampled at the cell centers of a 1-D grid."""
    if grid.n != 1:
        raise DimensionMismatch(f"velocity_field needs a 1-D grid, got n={grid.n}")
    v = velocity_at(matrix, grid.axis_centers())
    return VectorField(grid, v[:, None], name="velocity")


def sample_targets(matrix: TransitionMatrix, rows: ArrayLike, rng: np.random.Generator) -> NDArray:
    """Draw a destination for each entry of ``rows`` from that row's distribution.

    Rows and returned destinations are array positions (0-based).
    """
    rows = np.asarray(rows, dtype=np.int64)
    cdf = np.cumsum(matrix.probs, axis=1)
    u = rng.random(rows.shape) * cdf[rows, -1]
    targets = (u[..., None] >= cdf[rows]).sum(axis=-1)
    return np.minimum(targets, matrix.K - 1)


def parse_transition_csv(
    text: str, horizon: float | None = None, renormalize: bool = False
) -> TransitionMatrix:
    """Parse the ``grades`` / ``horizon`` / K probability rows CSV layout.

    ``horizon`` overrides the value carried in the file. With ``renormalize``
    rows are rescaled to sum to one before validation.
    """
    lines = text.splitlines()
    # keep original 1-based line numbers while skipping blank lines
    numbered = [(k + 1, ln) for k, ln in enumerate(lines) if ln.strip()]
    if len(numbered) < 2:
        raise ParseError("expected a 'grades' line and a 'horizon' line", line=len(lines) or 1)

    def numbers(lineno: int, cells: list[str], start_col: int) -> list[float]:
        out = []
        for c, cell in enumerate(cells):
            try:
                out.append(float(cell))
            except ValueError:
                raise ParseError(f"not a number: {cell.strip()!r}", lineno, start_col + c) from None
        return out

    ln, first = numbered[0]
    cells = first.split(",")
    if cells[0].strip() != "grades":
        raise ParseError("first line must start with 'grades'", ln, 1)
    grades = numbers(ln, cells[1:], 2)
    try:
        scale = GradeScale(grades)
    except ValueError as exc:
        raise ParseError(str(exc), ln) from None
    K = scale.K

    ln, second = numbered[1]
    cells = second.split(",")
    if cells[0].strip() != "horizon" or len(cells) != 2:
        raise ParseError("second line must be 'horizon,<T>'", ln, 1)
    T = numbers(ln, cells[1:], 2)[0]
    if horizon is not None:
        T = float(horizon)
    if not T > 0:
        raise ParseError(f"horizon must be positive, got {T}", ln, 2)

    body = numbered[2:]
    if len(body) != K:
        where = body[K][0] if len(body) > K else (numbered[-1][0] + 1)
        raise ParseError(f"expected {K} probability rows, got {len(body)}", where)
    rows = []
    for ln, raw in body:
        cells = raw.split(",")
        if len(cells) != K:
            raise ParseError(f"expected {K} probabilities, got {len(cells)}", ln, min(len(cells), K) + 1)
        row = numbers(ln, cells, 1)
        for c, p in enumerate(row):
            if not 0.0 <= p <= 1.0:
                raise ParseError(f"probability {p} outside [0, 1]", ln, c + 1)
        rows.append(row)
    probs = np.array(rows)
    if renormalize:
        probs = renormalize_rows(probs)
    for i, row in enumerate(probs):
        deficit = 1.0 - float(np.sum(row))
        if abs(deficit) > ROW_SUM_TOL:
            raise RowNotStochastic(i + 1, deficit, line=body[i][0])
    return TransitionMatrix(scale, probs, T)


def format_transition_csv(matrix: TransitionMatrix) -> str:
    lines = [
        ",".join(["grades", *(fmt(g) for g in matrix.grades)]),
        f"horizon,{fmt(matrix.horizon)}",
    ]
    lines += [",".join(fmt(p) for p in row) for row in matrix.probs]
    return "\n".join(lines) + "\n"
