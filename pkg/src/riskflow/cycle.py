"""Linear supply-demand cycle in the one-dimensional risk domain.

Small disturbances ``s(t, x)``, ``d(t, x)`` of supply ``S0 (1 + s)`` and
demand ``D0 (1 + d)`` are driven by the supply and demand velocities
``v_s(t, x)``, ``v_d(t, x)``::

    S0 ds/dt + S0 dv_s/dx = a D0 x v_d        S0 dv_s/dt = alpha D0 v_d
    D0 dd/dt + D0 dv_d/dx = b S0 x v_s        D0 dv_d/dt = beta  S0 v_s

Taking the 1, x and x**2 moments over [0, 1] (velocity profiles vanish at
both ends) closes a linear ODE system in ten moments, which oscillates at
``omega = sqrt(-alpha * beta)``. Three solution paths are provided: closed
forms (:func:`analytic_state`), RK4 on the moment system
(:func:`integrate_cycle`) and a spatially resolved method-of-lines solve
(:func:`spatial_cycle`).

Mean-risk disturbances follow from ``x_s = 2 f - s`` and ``x_d = 2 g - d``
with ``f``, ``g`` the first moments of ``s`` and ``d``; the mean risks are
``X = (1 + x) / 2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from riskflow.domain import Grid, divergence_array, fmt
from riskflow.errors import (
    CFLViolation,
    InsufficientOscillation,
    InvalidParams,
    ProfileBoundaryViolation,
)

STATE_NAMES = ("s", "d", "f", "g", "v_s", "v_d", "v_sx", "v_dx", "v_sx2", "v_dx2")
CSV_COLUMNS = (
    "t", "s", "d", "x_s", "x_d", "X_s", "X_d",
    "v_s", "v_d", "v_sx", "v_dx", "v_sx2", "v_dx2", "f", "g",
)
LINEAR_REGIME_LIMIT = 0.5
PROFILE_BOUNDARY_TOL = 1e-12
CFL_LIMIT = 0.5


class LinearRegimeWarning(RuntimeWarning):
    """Disturbances grew beyond the range where the linearisation is meaningful."""


@dataclass(frozen=True)
class CycleParams:
    """Coefficients and amplitudes of the supply-demand cycle.

    ``alpha``/``beta`` couple the velocities, ``a``/``b`` couple velocities
    into the disturbances (default to ``alpha``/``beta``). ``vs0``, ``vsx0``
    and ``vsx20`` are the sine amplitudes of the 0th, 1st and 2nd x-moments
    of the supply velocity. ``f_const``/``g_const`` add integration
    constants to the first moments of s and d.
    """

    s0: float
    d0: float
    alpha: float
    beta: float
    a: float | None = None
    b: float | None = None
    vs0: float = 0.0
    vsx0: float = 0.0
    vsx20: float = 0.0
    f_const: float = 0.0
    g_const: float = 0.0

    def __post_init__(self):
        if self.a is None:
            object.__setattr__(self, "a", self.alpha)
        if self.b is None:
            object.__setattr__(self, "b", self.beta)
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise InvalidParams(f"{f.name} must be finite, got {value}")
        if not self.alpha * self.beta < 0:
            raise InvalidParams("alpha*beta must be negative")
        if not self.alpha > 0:
            raise InvalidParams("alpha must be positive (and beta negative)")
        if not (self.s0 > 0 and self.d0 > 0):
            raise InvalidParams("s0 and d0 must be positive")

    @property
    def omega(self) -> float:
        return math.sqrt(-self.alpha * self.beta)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @property
    def demand_ratio(self) -> float:
        """Amplitude of each demand-velocity moment per unit supply amplitude."""
        return self.omega * self.s0 / (self.alpha * self.d0)

    def scaled(self, c: float) -> "CycleParams":
        """Same coefficients with all three velocity amplitudes multiplied by ``c``."""
        return CycleParams(
            self.s0, self.d0, self.alpha, self.beta, self.a, self.b,
            c * self.vs0, c * self.vsx0, c * self.vsx20, self.f_const, self.g_const,
        )


@dataclass(frozen=True)
class CycleState:
    s: float
    d: float
    f: float
    g: float
    v_s: float
    v_d: float
    v_sx: float
    v_dx: float
    v_sx2: float
    v_dx2: float

    @classmethod
    def from_array(cls, y: ArrayLike) -> "CycleState":
        return cls(*(float(v) for v in np.asarray(y, dtype=float).reshape(10)))

    def as_array(self) -> NDArray:
        return np.array([getattr(self, k) for k in STATE_NAMES])

    @property
    def x_s(self) -> float:
        return 2.0 * self.f - self.s

    @property
    def x_d(self) -> float:
        return 2.0 * self.g - self.d

    @property
    def X_s(self) -> float:
        return 0.5 * (1.0 + self.x_s)

    @property
    def X_d(self) -> float:
        return 0.5 * (1.0 + self.x_d)


def analytic_states(params: CycleParams, times: ArrayLike) -> NDArray:
    """Closed-form moments at each time, shape ``(len(times), 10)`` in ``STATE_NAMES`` order."""
    p = params
    t = np.asarray(times, dtype=float).reshape(-1)
    w = p.omega
    sn, cs = np.sin(w * t), np.cos(w * t)
    r = p.demand_ratio
    kd = p.b * p.s0 / (w * p.d0)
    out = np.empty((t.size, 10))
    out[:, 0] = (p.a / p.alpha) * p.vsx0 * sn
    out[:, 1] = -kd * p.vsx0 * cs
    out[:, 2] = (p.a / p.alpha) * p.vsx20 * sn - (p.vs0 / w) * cs + p.f_const
    out[:, 3] = (p.s0 / (p.alpha * p.d0)) * p.vs0 * sn - kd * p.vsx20 * cs + p.g_const
    out[:, 4] = p.vs0 * sn
    out[:, 5] = r * p.vs0 * cs
    out[:, 6] = p.vsx0 * sn
    out[:, 7] = r * p.vsx0 * cs
    out[:, 8] = p.vsx20 * sn
    out[:, 9] = r * p.vsx20 * cs
    return out


def analytic_state(params: CycleParams, t: float) -> CycleState:
    """Closed-form solution of the moment system at time ``t``.

    Sine moments start at zero; the integration constants of the first
    moments ``f`` and ``g`` are ``params.f_const`` and ``params.g_const``.
    """
    return CycleState.from_array(analytic_states(params, [t])[0])


def analytic_mean_risk_disturbances(params: CycleParams, t: ArrayLike) -> tuple[NDArray, NDArray]:
    """Closed forms of ``x_s`` and ``x_d``.

    ``x_s = (a/alpha)(2 vsx20 - vsx0) sin wt - 2 (vs0/w) cos wt`` and
    ``x_d = 2 S0/(alpha D0) vs0 sin wt - b S0/(w D0) (2 vsx20 - vsx0) cos wt``
    (plus twice the integration constants).
    """
    p = params
    t = np.asarray(t, dtype=float)
    w = p.omega
    sn, cs = np.sin(w * t), np.cos(w * t)
    spread = 2.0 * p.vsx20 - p.vsx0
    x_s = (p.a / p.alpha) * spread * sn - 2.0 * (p.vs0 / w) * cs + 2.0 * p.f_const
    x_d = (
        2.0 * p.s0 / (p.alpha * p.d0) * p.vs0 * sn
        - p.b * p.s0 / (w * p.d0) * spread * cs
        + 2.0 * p.g_const
    )
    return x_s, x_d


def xs_alternate_form(params: CycleParams, t: ArrayLike) -> NDArray:
    """``(a/alpha) vsx20 sin wt - 2 (vs0/w) cos wt``.

    A variant of the x_s closed form whose sine amplitude lacks the ``-s``
    contribution of ``x_s = 2 f - s``. It disagrees with the moment system by
    ``(a/alpha)(vsx20 - vsx0) sin wt`` and is kept only as a comparison target.
    """
    p = params
    t = np.asarray(t, dtype=float)
    w = p.omega
    return (p.a / p.alpha) * p.vsx20 * np.sin(w * t) - 2.0 * (p.vs0 / w) * np.cos(w * t)


def rhs_matrix(params: CycleParams) -> NDArray:
    """Matrix ``J`` with ``dy/dt = J @ y`` for the state in ``STATE_NAMES`` order."""
    p = params
    ka = p.a * p.d0 / p.s0
    kb = p.b * p.s0 / p.d0
    kal = p.alpha * p.d0 / p.s0
    kbe = p.beta * p.s0 / p.d0
    i = {k: n for n, k in enumerate(STATE_NAMES)}
    J = np.zeros((10, 10))
    J[i["s"], i["v_dx"]] = ka
    J[i["d"], i["v_sx"]] = kb
    J[i["f"], i["v_s"]] = 1.0
    J[i["f"], i["v_dx2"]] = ka
    J[i["g"], i["v_d"]] = 1.0
    J[i["g"], i["v_sx2"]] = kb
    for sup, dem in (("v_s", "v_d"), ("v_sx", "v_dx"), ("v_sx2", "v_dx2")):
        J[i[sup], i[dem]] = kal
        J[i[dem], i[sup]] = kbe
    return J


def ode_rhs(state: CycleState, params: CycleParams) -> CycleState:
    """Time derivative of every moment."""
    return CycleState.from_array(rhs_matrix(params) @ state.as_array())


@dataclass
class CycleTrace:
    """Ten moment series on a common time grid plus the derived mean risks."""

    times: NDArray
    states: NDArray

    def series(self, name: str) -> NDArray:
        if name in STATE_NAMES:
            return self.states[:, STATE_NAMES.index(name)]
        derived = {
            "x_s": lambda: 2.0 * self.series("f") - self.series("s"),
            "x_d": lambda: 2.0 * self.series("g") - self.series("d"),
            "X_s": lambda: 0.5 * (1.0 + self.series("x_s")),
            "X_d": lambda: 0.5 * (1.0 + self.series("x_d")),
            "t": lambda: self.times,
        }
        if name not in derived:
            raise KeyError(name)
        return derived[name]()

    def __getattr__(self, name: str) -> NDArray:
        if name in STATE_NAMES or name in ("x_s", "x_d", "X_s", "X_d"):
            return self.series(name)
        raise AttributeError(name)

    def to_csv(self) -> str:
        cols = [self.series(c) for c in CSV_COLUMNS]
        lines = [",".join(CSV_COLUMNS)]
        for row in zip(*cols):
            lines.append(",".join(fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _n_steps(dt: float, t_end: float) -> int:
    if not dt > 0:
        raise InvalidParams(f"dt must be positive, got {dt}")
    if not t_end >= 0:
        raise InvalidParams(f"t_end must be nonnegative, got {t_end}")
    return int(math.floor(t_end / dt + 1e-9))


def _warn_regime(states: NDArray) -> None:
    if states.size and np.max(np.abs(states[:, :2])) > LINEAR_REGIME_LIMIT:
        warnings.warn(
            f"|s| or |d| exceeds {LINEAR_REGIME_LIMIT}; linear approximation is questionable",
            LinearRegimeWarning,
            stacklevel=3,
        )


def _rk4(f: Callable[[NDArray], NDArray], y0: NDArray, dt: float, n_steps: int, record) -> None:
    y = y0
    record(0, y)
    for k in range(1, n_steps + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        record(k, y)


def integrate_cycle(params: CycleParams, dt: float, t_end: float) -> CycleTrace:
    """Classical fixed-step RK4 on the moment system from the closed-form t=0 state."""
    n = _n_steps(dt, t_end)
    J = rhs_matrix(params)
    out = np.empty((n + 1, 10))

    def record(k, y):
        out[k] = y

    _rk4(lambda y: J @ y, analytic_states(params, [0.0])[0], dt, n, record)
    _warn_regime(out)
    return CycleTrace(np.arange(n + 1) * dt, out)


def estimate_frequency(series: ArrayLike, times: ArrayLike) -> float:
    """Angular frequency from the mean spacing of zero crossings.

    Crossings are located by linear interpolation between consecutive
    nonzero samples of opposite sign; successive crossings of a sinusoid
    are ``pi / omega`` apart.
    """
    y = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    if y.shape != t.shape:
        raise ValueError("series and times must have the same shape")
    nz = y != 0.0
    y, t = y[nz], t[nz]
    flips = np.nonzero(np.signbit(y[:-1]) != np.signbit(y[1:]))[0]
    if flips.size < 3:
        raise InsufficientOscillation(f"need >= 3 sign changes, found {flips.size}")
    y0, y1 = y[flips], y[flips + 1]
    t0, t1 = t[flips], t[flips + 1]
    crossings = t0 - y0 * (t1 - t0) / (y1 - y0)
    spacing = (crossings[-1] - crossings[0]) / (crossings.size - 1)
    return math.pi / spacing


# --- spatially resolved variant -------------------------------------------------

def _sine_moments(k: int) -> tuple[float, float, float]:
    """Integrals of ``x**p sin(k pi x)`` over [0, 1] for p = 0, 1, 2."""
    kp = k * math.pi
    sg = (-1.0) ** k
    return ((1.0 - sg) / kp, -sg / kp, -sg / kp + 2.0 * (sg - 1.0) / kp**3)


_SINE_MOMENTS = np.array([_sine_moments(k) for k in (1, 2, 3)]).T


def sine_profile_coefficients(params: CycleParams) -> NDArray:
    """Coefficients ``c_k`` of ``v_d(0, x) = sum_k c_k sin(k pi x)``, k = 1..3.

    Chosen so the 0th, 1st and 2nd x-moments of the initial demand velocity
    equal the closed-form values ``demand_ratio * (vs0, vsx0, vsx20)``.
    """
    target = params.demand_ratio * np.array([params.vs0, params.vsx0, params.vsx20])
    return np.linalg.solve(_SINE_MOMENTS, target)


def default_profile(params: CycleParams) -> Callable[[NDArray], NDArray]:
    c = sine_profile_coefficients(params)

    def profile(x):
        x = np.asarray(x, dtype=float)
        return sum(ck * np.sin((k + 1) * np.pi * x) for k, ck in enumerate(c))

    return profile


def _linear_profile(total: float, first: float) -> Callable[[NDArray], NDArray]:
    """Linear function on [0, 1] with the given integral and first moment."""
    slope = 12.0 * (first - 0.5 * total)
    return lambda x: total + slope * (np.asarray(x) - 0.5)


@dataclass
class SpatialCycleResult:
    trace: CycleTrace
    grid: Grid
    snapshot_times: NDArray
    snapshots: dict[str, NDArray]


def spatial_cycle(
    params: CycleParams,
    m: int,
    dt: float,
    t_end: float,
    profile: Callable[[NDArray], NDArray] | None = None,
    snapshot_every: int = 0,
) -> SpatialCycleResult:
    """Evolve ``s, d, v_s, v_d`` on an m-cell grid and reduce to the ten moments.

    The initial demand velocity is ``profile`` (default: the three-mode sine
    profile matching the configured moments); the supply velocity starts at
    zero. ``s(0, x)`` and ``d(0, x)`` are linear with the closed-form t=0
    values of ``s, f`` and ``d, g`` as integral and first moment. The
    ``dv/dx`` terms use the conservative face-difference divergence with
    zero boundary flux; time stepping is RK4 on the semi-discrete system.

    Raises
    ------
    ProfileBoundaryViolation
        If the velocity profile does not vanish at x = 0 and x = 1.
    CFLViolation
        If ``dt * max|v| > 0.5 * h`` over the run.
    """
    p = params
    grid = Grid(1, m)
    h = grid.h
    x = grid.axis_centers()
    prof = profile or default_profile(p)
    ends = np.abs(np.asarray(prof(np.array([0.0, 1.0])), dtype=float))
    if np.any(ends > PROFILE_BOUNDARY_TOL):
        raise ProfileBoundaryViolation(
            f"velocity profile must vanish at x=0 and x=1, got {ends.tolist()}"
        )
    n = _n_steps(dt, t_end)

    y0 = analytic_states(p, [0.0])[0]
    vd0 = np.asarray(prof(x), dtype=float)
    # v_s starts at zero, so its amplitude is |v_d| * alpha D0 / (S0 omega)
    vmax = float(np.max(np.abs(vd0))) * max(1.0, p.alpha * p.d0 / (p.s0 * p.omega))
    if vmax > 0 and dt * vmax > CFL_LIMIT * h * (1 + 1e-12):
        raise CFLViolation(f"dt={dt!r} exceeds CFL bound {CFL_LIMIT * h / vmax!r}")

    state = np.stack(
        [
            _linear_profile(y0[0], y0[2])(x),
            _linear_profile(y0[1], y0[3])(x),
            np.zeros(m),
            vd0,
        ]
    )
    ka, kb = p.a * p.d0 / p.s0, p.b * p.s0 / p.d0
    kal, kbe = p.alpha * p.d0 / p.s0, p.beta * p.s0 / p.d0

    def rhs(u):
        s_, d_, vs, vd = u
        return np.stack(
            [
                -divergence_array(vs[:, None], h) + ka * x * vd,
                -divergence_array(vd[:, None], h) + kb * x * vs,
                kal * vd,
                kbe * vs,
            ]
        )

    weights = np.stack([np.full(m, h), x * h, x * x * h])
    out = np.empty((n + 1, 10))
    snap_t, snaps = [], {k: [] for k in ("s", "d", "v_s", "v_d")}

    def record(k, u):
        s_, d_, vs, vd = u
        ms, md = weights[:2] @ s_, weights[:2] @ d_
        mvs, mvd = weights @ vs, weights @ vd
        out[k] = [ms[0], md[0], ms[1], md[1], mvs[0], mvd[0], mvs[1], mvd[1], mvs[2], mvd[2]]
        if snapshot_every and k % snapshot_every == 0:
            snap_t.append(k * dt)
            for name, arr in zip(snaps, u):
                snaps[name].append(arr.copy())

    _rk4(rhs, state, dt, n, record)
    _warn_regime(out)
    return SpatialCycleResult(
        trace=CycleTrace(np.arange(n + 1) * dt, out),
        grid=grid,
        snapshot_times=np.array(snap_t),
        snapshots={k: np.array(v) for k, v in snaps.items()},
    )


def max_cfl_dt(params: CycleParams, m: int, profile=None, fraction: float = 1.0) -> float:
    """Largest step allowed by the CFL bound for :func:`spatial_cycle`, times ``fraction``."""
    x = Grid(1, m).axis_centers()
    prof = profile or default_profile(params)
    vmax = float(np.max(np.abs(prof(x)))) * max(
        1.0, params.alpha * params.d0 / (params.s0 * params.omega)
    )
    if vmax == 0:
        return math.inf
    return fraction * CFL_LIMIT / (m * vmax)
