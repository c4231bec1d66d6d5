"""Buy-sell transactions on the seller x buyer domain z = (x, y) in [0, 1]^(2n).

Gridded quantities follow the field convention used elsewhere: cell values
are cell sums of the trade records, and totals are midpoint integrals of
those fields (so a gridded total is the raw sum times ``h**(2n)``). Mean
risks and velocities are ratios and are directly comparable between the
gridded and the exact (per-trade) reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from riskflow.agents import AveragingWindow, Population
from riskflow.domain import Grid, ScalarField, fmt
from riskflow.errors import DimensionMismatch, ParseError, ZeroMass

FLOW_NAMES = ("xU", "yU", "xC", "yC")


@dataclass(frozen=True)
class Trade:
    """One transaction: the seller at x sells ``volume`` to the buyer at y for ``value``."""

    seller_pos: tuple[float, ...]
    buyer_pos: tuple[float, ...]
    volume: float
    value: float
    seller_vel: tuple[float, ...] | None = None
    buyer_vel: tuple[float, ...] | None = None

    def __post_init__(self):
        x = tuple(float(c) for c in np.atleast_1d(self.seller_pos))
        y = tuple(float(c) for c in np.atleast_1d(self.buyer_pos))
        if len(x) != len(y):
            raise DimensionMismatch("seller and buyer positions differ in dimension")
        if not all(0.0 <= c <= 1.0 for c in x + y):
            raise ValueError("trade positions must lie in the unit cube")
        if not (np.isfinite(self.volume) and np.isfinite(self.value)):
            raise ValueError("trade volume and value must be finite")
        if self.volume < 0 or self.value < 0:
            raise ValueError("trade volume and value must be nonnegative")
        sv = tuple(float(c) for c in np.atleast_1d(self.seller_vel)) if self.seller_vel is not None else (0.0,) * len(x)
        bv = tuple(float(c) for c in np.atleast_1d(self.buyer_vel)) if self.buyer_vel is not None else (0.0,) * len(x)
        if len(sv) != len(x) or len(bv) != len(x):
            raise DimensionMismatch("trade velocities must match the position dimension")
        object.__setattr__(self, "seller_pos", x)
        object.__setattr__(self, "buyer_pos", y)
        object.__setattr__(self, "seller_vel", sv)
        object.__setattr__(self, "buyer_vel", bv)
        object.__setattr__(self, "volume", float(self.volume))
        object.__setattr__(self, "value", float(self.value))

    @property
    def n(self) -> int:
        return len(self.seller_pos)


@dataclass(frozen=True)
class _TradeArrays:
    x: NDArray
    y: NDArray
    U: NDArray
    C: NDArray
    sv: NDArray
    bv: NDArray


def _arrays(trades: Sequence[Trade], n: int | None = None) -> _TradeArrays:
    if not trades:
        n = n or 1
        z = np.zeros((0, n))
        return _TradeArrays(z, z, np.zeros(0), np.zeros(0), z, z)
    n = trades[0].n
    if any(t.n != n for t in trades):
        raise DimensionMismatch("all trades must share one dimension")
    return _TradeArrays(
        x=np.array([t.seller_pos for t in trades]),
        y=np.array([t.buyer_pos for t in trades]),
        U=np.array([t.volume for t in trades]),
        C=np.array([t.value for t in trades]),
        sv=np.array([t.seller_vel for t in trades]),
        bv=np.array([t.buyer_vel for t in trades]),
    )


@dataclass(frozen=True, eq=False)
class TransactionField:
    """Volume, value and their four axis flows on the 2n-dimensional grid.

    ``U`` and ``C`` have shape ``grid.shape``; each flow has shape
    ``grid.shape + (n,)``: ``P_xU``/``P_xC`` are carried by seller motion,
    ``P_yU``/``P_yC`` by buyer motion.
    """

    grid: Grid
    U: NDArray
    C: NDArray
    P_xU: NDArray
    P_yU: NDArray
    P_xC: NDArray
    P_yC: NDArray

    def __post_init__(self):
        if self.grid.n % 2:
            raise DimensionMismatch("a transaction grid has even dimension 2n")
        n = self.grid.n // 2
        for name in ("U", "C"):
            a = np.array(getattr(self, name), dtype=float).reshape(self.grid.shape)
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite and nonnegative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        for name in FLOW_NAMES:
            a = np.array(getattr(self, "P_" + name), dtype=float).reshape(self.grid.shape + (n,))
            a.setflags(write=False)
            object.__setattr__(self, "P_" + name, a)

    @property
    def n(self) -> int:
        return self.grid.n // 2

    @property
    def side_grid(self) -> Grid:
        return Grid(self.n, self.grid.m)


@dataclass(frozen=True)
class TransactionMacro:
    """Totals, axis flows, velocities and mean risks of all transactions.

    Quantities that are undefined because their total is zero are ``None``;
    :meth:`get` raises :class:`ZeroMass` for them.
    """

    U: float
    C: float
    P_xU: NDArray
    P_yU: NDArray
    P_xC: NDArray
    P_yC: NDArray
    v_xU: NDArray | None
    v_yU: NDArray | None
    v_xC: NDArray | None
    v_yC: NDArray | None
    X_xU: NDArray | None
    X_yU: NDArray | None
    X_xC: NDArray | None
    X_yC: NDArray | None

    def get(self, name: str) -> NDArray:
        value = getattr(self, name)
        if value is None:
            total = "U" if name.endswith("U") else "C"
            raise ZeroMass(f"{name} undefined: total {total} is zero")
        return value

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = None if v is None else (float(v) if np.ndim(v) == 0 else [float(c) for c in v])
        return out


def aggregate_trades(
    trades: Sequence[Trade], grid: Grid, window: AveragingWindow | None = None
) -> TransactionField:
    """Grid trades onto the seller x buyer domain.

    ``grid`` is the n-dimensional grid of one side; the result lives on
    ``Grid(2n, m)``. With a window, all six arrays are box-averaged together.
    """
    n = grid.n
    ta = _arrays(trades, n)
    if trades and ta.x.shape[1] != n:
        raise DimensionMismatch(f"trades have dimension {ta.x.shape[1]}, grid has {n}")
    g2 = Grid(2 * n, grid.m)
    packed = np.zeros((g2.size, 2 + 4 * n))
    if ta.U.size:
        cells = g2.cell_index(np.hstack([ta.x, ta.y]))
        w = np.hstack(
            [
                ta.U[:, None],
                ta.C[:, None],
                ta.U[:, None] * ta.sv,
                ta.U[:, None] * ta.bv,
                ta.C[:, None] * ta.sv,
                ta.C[:, None] * ta.bv,
            ]
        )
        np.add.at(packed, cells, w)
    packed = packed.reshape(g2.shape + (2 + 4 * n,))
    if window is not None:
        packed = window.push(packed)
    flows = [packed[..., 2 + k * n : 2 + (k + 1) * n] for k in range(4)]
    return TransactionField(g2, packed[..., 0], packed[..., 1], *flows)


def _marginal(tf: TransactionField, over_axes: tuple[int, ...]) -> tuple[ScalarField, ScalarField]:
    side = tf.side_grid
    scale = side.cell_volume
    U = tf.U.sum(axis=over_axes) * scale
    C = tf.C.sum(axis=over_axes) * scale
    return ScalarField(side, U, "volume"), ScalarField(side, C, "value")


def marginal_sales(tf: TransactionField) -> tuple[ScalarField, ScalarField]:
    """Volume and value sold at each seller cell x (integrated over buyers)."""
    n = tf.n
    return _marginal(tf, tuple(range(n, 2 * n)))


def marginal_purchases(tf: TransactionField) -> tuple[ScalarField, ScalarField]:
    """Volume and value bought at each buyer cell y (integrated over sellers)."""
    return _marginal(tf, tuple(range(tf.n)))


def _build_macro(
    U: float, C: float, flows: dict[str, NDArray], moments: dict[str, NDArray]
) -> TransactionMacro:
    totals = {"U": U, "C": C}
    vel, risk = {}, {}
    for name in FLOW_NAMES:
        tot = totals[name[-1]]
        vel["v_" + name] = flows[name] / tot if tot != 0 else None
        risk["X_" + name] = moments[name] / tot if tot != 0 else None
    return TransactionMacro(
        U=U, C=C, **{"P_" + k: v for k, v in flows.items()}, **vel, **risk
    )


def macro_transaction(tf: TransactionField) -> TransactionMacro:
    """Domain integrals of the gridded transaction field (cell-center coordinates)."""
    g = tf.grid
    n = tf.n
    dz = g.cell_volume
    U = float(tf.U.sum()) * dz
    C = float(tf.C.sum()) * dz
    flows = {
        name: getattr(tf, "P_" + name).reshape(g.size, n).sum(axis=0) * dz for name in FLOW_NAMES
    }
    centers = g.center_mesh()
    xc, yc = centers[..., :n], centers[..., n:]
    moments = {
        "xU": np.tensordot(tf.U, xc, axes=g.n) * dz,
        "yU": np.tensordot(tf.U, yc, axes=g.n) * dz,
        "xC": np.tensordot(tf.C, xc, axes=g.n) * dz,
        "yC": np.tensordot(tf.C, yc, axes=g.n) * dz,
    }
    return _build_macro(U, C, flows, moments)


def exact_macro_transaction(trades: Sequence[Trade], n: int | None = None) -> TransactionMacro:
    """Per-trade sums with raw coordinates, no gridding."""
    ta = _arrays(trades, n)
    U = float(ta.U.sum())
    C = float(ta.C.sum())
    flows = {
        "xU": ta.U @ ta.sv,
        "yU": ta.U @ ta.bv,
        "xC": ta.C @ ta.sv,
        "yC": ta.C @ ta.bv,
    }
    moments = {"xU": ta.U @ ta.x, "yU": ta.U @ ta.y, "xC": ta.C @ ta.x, "yC": ta.C @ ta.y}
    return _build_macro(U, C, flows, moments)


def trades_from_population(
    pop: Population,
    sellers: ArrayLike,
    buyers: ArrayLike,
    volumes: ArrayLike,
    values: ArrayLike,
) -> list[Trade]:
    """Build trades between population members, identified by agent id.

    Endpoint velocities are the seller's and buyer's current velocities.
    """
    index = {int(a): i for i, a in enumerate(pop.ids)}
    out = []
    for s, b, u, c in zip(sellers, buyers, volumes, values):
        i, j = index[int(s)], index[int(b)]
        out.append(
            Trade(
                pop.positions[i], pop.positions[j], float(u), float(c),
                pop.velocities[i], pop.velocities[j],
            )
        )
    return out


def trades_csv(trades: Sequence[Trade], n: int | None = None) -> str:
    n = trades[0].n if trades else (n or 1)
    header = (
        [f"x_{j + 1}" for j in range(n)]
        + [f"y_{j + 1}" for j in range(n)]
        + ["volume", "value"]
        + [f"sv_{j + 1}" for j in range(n)]
        + [f"bv_{j + 1}" for j in range(n)]
    )
    lines = [",".join(header)]
    for t in trades:
        row = [*t.seller_pos, *t.buyer_pos, t.volume, t.value, *t.seller_vel, *t.buyer_vel]
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_trades_csv(text: str) -> list[Trade]:
    """Parse ``x_1..x_n,y_1..y_n,volume,value,sv_1..sv_n,bv_1..bv_n``."""
    lines = [(k + 1, ln) for k, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise ParseError("empty trade file", 1)
    header = [h.strip() for h in lines[0][1].split(",")]
    if (len(header) - 2) % 4 or len(header) < 6:
        raise ParseError(f"unexpected column count {len(header)}", 1)
    n = (len(header) - 2) // 4
    expected = (
        [f"x_{j + 1}" for j in range(n)]
        + [f"y_{j + 1}" for j in range(n)]
        + ["volume", "value"]
        + [f"sv_{j + 1}" for j in range(n)]
        + [f"bv_{j + 1}" for j in range(n)]
    )
    for c, (got, want) in enumerate(zip(header, expected)):
        if got != want:
            raise ParseError(f"expected column {want!r}, got {got!r}", 1, c + 1)
    trades = []
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
        try:
            trades.append(
                Trade(
                    vals[:n], vals[n : 2 * n], vals[2 * n], vals[2 * n + 1],
                    vals[2 * n + 2 : 3 * n + 2], vals[3 * n + 2 :],
                )
            )
        except ValueError as exc:
            raise ParseError(str(exc), ln) from None
    return trades
