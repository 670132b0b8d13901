"""Inverse local densities and the Lagrangian Lax-Friedrichs scheme.

``w_i = headway_i / L`` lives on the Lagrangian grid ``y_{i-1/2} = (i-1) L``.
The scheme

    w_i' = (w_{i+1} + w_{i-1}) / 2
           + dt / (2L) * (c(x_{i+1}) v~(w_{i+1}) - c(x_{i-1}) v~(w_{i-1}))

with ``v~(w) = v(1/w)`` is periodic in ``i``. Positions are carried along by
moving the first vehicle with its own speed and stacking the headways
``L * w`` behind it. This module is a verification harness: it checks the
lower and upper bounds on ``w`` that hold for short horizons and rebuilds the
Eulerian density from the Lagrangian data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from accflow.core import (
    NO_ACCIDENTS,
    AccidentSet,
    CFLError,
    InvariantViolation,
    RoadConfig,
    equidistant_positions,
    lagrangian_velocity,
    lipschitz_estimate,
    total_capacity,
    velocity,
)

CapacityFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LagrangianState:
    """Inverse densities ``w`` with the first vehicle's position ``x1``.

    ``eps`` is the initial safety margin ``min w(0) - 1``, ``eps_tilde`` the
    guaranteed margin and ``K_upper`` the initial bound on ``max w`` and on
    the total variation of ``w``.
    """

    w: np.ndarray
    x1: float
    L: float
    road: RoadConfig
    t: float = 0.0
    eps: float = 0.0
    eps_tilde: float = 0.0
    K_upper: float = 0.0
    acc: AccidentSet = NO_ACCIDENTS

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))

    @property
    def N(self) -> int:
        return len(self.w)

    @property
    def y_grid(self) -> np.ndarray:
        """``y_{i-1/2} = (i-1) L`` for ``i = 1..N``."""
        return np.arange(self.N) * self.L

    @property
    def positions(self) -> np.ndarray:
        """Unwrapped positions ``x_1 + L (w_1 + ... + w_{i-1})``."""
        return self.x1 + self.L * np.concatenate(([0.0], np.cumsum(self.w[:-1])))

    def capacity(self, x) -> np.ndarray:
        return total_capacity(x, self.acc, self.road, smoothed=True)


def total_variation(w: np.ndarray) -> float:
    """Periodic total variation ``sum |w_{i+1} - w_i|`` including the wrap term."""
    return float(np.abs(np.roll(w, -1) - w).sum())


def to_lagrangian(
    positions,
    L: float,
    road: RoadConfig,
    acc: AccidentSet = NO_ACCIDENTS,
    eps_tilde_ratio: float = 0.5,
    t: float = 0.0,
) -> LagrangianState:
    """``w_i = (x_{i+1} - x_i) / L`` with the wrapped headway for the last vehicle."""
    x = np.asarray(positions, dtype=float)
    if np.any(np.diff(x) <= 0):
        raise InvariantViolation("positions must be strictly increasing")
    h = np.append(np.diff(x), x[0] + road.length - x[-1])
    if h.min() < L:
        raise InvariantViolation(f"headway {h.min():.17g} below vehicle length {L}")
    if not 0.0 < eps_tilde_ratio < 1.0:
        raise ValueError("eps_tilde_ratio must lie in (0, 1)")
    w = h / L
    eps = float(w.min() - 1.0)
    K = max(float(w.max()), total_variation(w))
    return LagrangianState(w, float(x[0]), L, road, t, eps, eps_tilde_ratio * eps, K, acc)


def lagrangian_capacity(y, positions, L: float, capacity: CapacityFn, road_length: float) -> np.ndarray:
    """Capacity on the Lagrangian grid, linear in the position argument between vehicles.

    For ``y`` in ``[y_{i-1/2}, y_{i+1/2}]`` this is ``c`` at
    ``((y - y_{i-1/2}) x_{i+1} + (y_{i+1/2} - y) x_i) / L``, where the
    vehicle after the last one is the first one shifted by the road length.
    """
    x = np.asarray(positions, dtype=float)
    nodes = np.append(x, x[0] + road_length)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if np.any(y < 0) or np.any(y > n * L * (1 + 1e-12)):
        raise ValueError("y must lie in [0, N L]")
    i = np.clip(np.floor(y / L).astype(int), 0, n - 1)
    theta = y / L - i
    return capacity((1.0 - theta) * nodes[i] + theta * nodes[i + 1])


@dataclass(frozen=True)
class LagrangianBounds:
    """Constants of the short-horizon bounds.

    ``L_c`` bounds the slope of the Lagrangian capacity in ``y``. Since
    ``dx/dy = w``, it is the Eulerian slope ``lip_x`` times the largest ``w``
    the upper bound allows on the horizon, ``K + eps``.
    """

    eps: float
    eps_tilde: float
    K: float
    w_inf: float
    lip_x: float
    L_c: float
    c_max: float

    @property
    def horizon(self) -> float:
        """Largest ``T`` with the lower bound guaranteed, ``eps / L_c``."""
        return np.inf if self.L_c == 0 else self.eps / self.L_c

    def dt_car_distance(self) -> float:
        return np.inf if self.L_c == 0 else (self.eps - self.eps_tilde) / self.L_c

    def dt_cfl(self, L: float, kappa: float) -> float:
        # slope of c * (1 - 1/w) in w on [1 + eps_tilde, inf) is c_max / (1 + eps_tilde)^2
        return (1.0 - kappa) * L * (1.0 + self.eps_tilde) ** 2 / self.c_max

    def upper(self, t) -> np.ndarray:
        return self.w_inf + np.asarray(t) * self.L_c

    @property
    def lower(self) -> float:
        return 1.0 + self.eps_tilde


def bounds_for(st: LagrangianState, n_grid: int = 200_001) -> LagrangianBounds:
    """Bound constants for ``st`` as an initial state (accident set frozen)."""
    road = st.road
    # a ramp across the wrap point is sampled as two halves of equal slope
    lip_x = lipschitz_estimate(st.capacity, road.a, road.b, n_grid)
    w_inf = float(st.w.max())
    c_max = float(np.max(st.capacity(np.linspace(road.a, road.b, n_grid))))
    return LagrangianBounds(st.eps, st.eps_tilde, st.K_upper, w_inf, lip_x, lip_x * (st.K_upper + st.eps), c_max)


def lxf_lagrangian_step(
    st: LagrangianState,
    dt: float,
    capacity: CapacityFn | None = None,
    bounds: LagrangianBounds | None = None,
    kappa: float = 0.05,
) -> LagrangianState:
    """One step of the periodic Lagrangian Lax-Friedrichs scheme.

    With ``bounds`` given, the step is rejected unless it satisfies the CFL
    condition and the car-distance condition ``dt <= (eps - eps_tilde) / L_c``.
    """
    if bounds is not None:
        if dt > bounds.dt_cfl(st.L, kappa) * (1 + 1e-12):
            raise CFLError(f"dt={dt} violates the Lagrangian CFL bound {bounds.dt_cfl(st.L, kappa)}")
        if dt > bounds.dt_car_distance() * (1 + 1e-12):
            raise CFLError(f"dt={dt} violates the car-distance bound {bounds.dt_car_distance()}")
    cap = st.capacity if capacity is None else capacity
    x = st.positions
    g = cap(x) * lagrangian_velocity(st.w)  # c~(y_{i-1/2}) v~(w_i)
    w_next, w_prev = np.roll(st.w, -1), np.roll(st.w, 1)
    g_next, g_prev = np.roll(g, -1), np.roll(g, 1)
    w = 0.5 * (w_next + w_prev) + dt / (2.0 * st.L) * (g_next - g_prev)
    x1 = st.x1 + dt * g[0]
    return replace(st, w=w, x1=x1, t=st.t + dt)


def modified_euler_positions(x, L: float, road_length: float, capacity: CapacityFn, dt: float) -> np.ndarray:
    """``x_i' = (x_{i+1} + x_{i-1}) / 2 + dt c(x_i) v(L / headway_i)``, shifting the wrapped neighbours."""
    x = np.asarray(x, dtype=float)
    nxt = np.append(x[1:], x[0] + road_length)
    prv = np.insert(x[:-1], 0, x[-1] - road_length)
    return 0.5 * (nxt + prv) + dt * capacity(x) * velocity(L / (nxt - x))


def presubstitution_update(st: LagrangianState, dt: float, capacity: CapacityFn | None = None) -> np.ndarray:
    """``w_i' = (w_{i+1} + w_{i-1}) / 2 + dt / L (c~_{i+1/2} v~(w_{i+1}) - c~_{i-1/2} v~(w_i))``.

    This is the exact image of one modified Euler position step, before the
    flux averaging that turns it into the Lax-Friedrichs scheme.
    """
    cap = st.capacity if capacity is None else capacity
    g = cap(st.positions) * lagrangian_velocity(st.w)
    return 0.5 * (np.roll(st.w, -1) + np.roll(st.w, 1)) + dt / st.L * (np.roll(g, -1) - g)


@dataclass
class BoundsReport:
    N: int
    T: float
    max_w: float
    min_w: float
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def check_bounds(trajectory: Sequence[LagrangianState], bounds: LagrangianBounds, atol: float = 1e-12) -> BoundsReport:
    """Compare every state with ``1 + eps_tilde <= w <= ||w(0)||_inf + t L_c``."""
    if not trajectory:
        raise ValueError("empty trajectory")
    t0 = trajectory[0].t
    report = BoundsReport(
        N=trajectory[0].N,
        T=trajectory[-1].t - t0,
        max_w=max(float(s.w.max()) for s in trajectory),
        min_w=min(float(s.w.min()) for s in trajectory),
    )
    for step, s in enumerate(trajectory):
        lo, hi = float(s.w.min()), float(s.w.max())
        upper = float(bounds.upper(s.t - t0))
        if lo < bounds.lower - atol:
            report.violations.append({"step": step, "t": s.t, "kind": "lower", "value": lo, "bound": bounds.lower})
        if hi > upper + atol:
            report.violations.append({"step": step, "t": s.t, "kind": "upper", "value": hi, "bound": upper})
    return report


class EulerianDensity:
    """``rho(x) = 1 / w(Y(x))`` for the piecewise linear position map ``X(y)``.

    ``X`` interpolates ``y_{i-1/2} -> x_i`` and closes the road with
    ``N L -> x_1 + (b - a)``; its inverse ``Y`` is again piecewise linear.
    """

    def __init__(self, w: np.ndarray, positions: np.ndarray, L: float, road: RoadConfig):
        x = np.asarray(positions, dtype=float)
        if np.any(np.diff(x) <= 0):
            raise InvariantViolation("positions must be strictly increasing in y")
        self.w = np.asarray(w, dtype=float)
        self.L = L
        self.road = road
        self.x_nodes = np.append(x, x[0] + road.length)
        self.y_nodes = np.arange(len(x) + 1) * L

    def X(self, y) -> np.ndarray:
        return np.interp(y, self.y_nodes, self.x_nodes)

    def Y(self, x) -> np.ndarray:
        """Inverse of ``X`` on one period, starting at the first vehicle."""
        x0 = self.x_nodes[0]
        xs = x0 + np.mod(np.asarray(x, dtype=float) - x0, self.road.length)
        return np.interp(xs, self.x_nodes, self.y_nodes)

    def __call__(self, x) -> np.ndarray:
        y = self.Y(x)
        i = np.clip(np.floor(y / self.L).astype(int), 0, len(self.w) - 1)
        return 1.0 / self.w[i]

    @property
    def mass(self) -> float:
        """Exact integral over one period: ``sum (1/w_i) (x_{i+1} - x_i)``."""
        return float(np.sum(np.diff(self.x_nodes) / self.w))


def reconstruct_eulerian(st: LagrangianState, positions: np.ndarray | None = None) -> EulerianDensity:
    return EulerianDensity(st.w, st.positions if positions is None else positions, st.L, st.road)


def interpolate_positions(s0: LagrangianState, s1: LagrangianState, t: float) -> np.ndarray:
    """Positions linearly interpolated in time between two snapshots."""
    if not s0.t <= t <= s1.t:
        raise ValueError("t outside the snapshot interval")
    theta = 0.0 if s1.t == s0.t else (t - s0.t) / (s1.t - s0.t)
    return (1.0 - theta) * s0.positions + theta * s1.positions


@dataclass
class HarnessResult:
    trajectory: list[LagrangianState]
    bounds: LagrangianBounds
    report: BoundsReport
    dt: float


def harness_run(
    road: RoadConfig,
    N: int,
    L: float,
    positions: np.ndarray | None = None,
    T: float | None = None,
    dt: float | None = None,
    acc: AccidentSet = NO_ACCIDENTS,
    kappa: float = 0.05,
    enforce: bool = True,
    eps_tilde_ratio: float = 0.5,
) -> HarnessResult:
    """Run the scheme from ``positions`` (equidistant by default) and check the bounds.

    ``T`` defaults to the guaranteed horizon ``eps / L_c`` and ``dt`` to the
    largest step allowed by both step conditions, shrunk so that it divides
    ``T``. With ``enforce=False`` an explicit ``dt`` is used as given.
    """
    x = equidistant_positions(road, N) if positions is None else np.asarray(positions, dtype=float)
    st = to_lagrangian(x, L, road, acc, eps_tilde_ratio)
    bnd = bounds_for(st)
    if T is None:
        T = bnd.horizon
        if not np.isfinite(T):
            raise ValueError("constant capacity has no finite horizon; pass T")
    dt_max = min(bnd.dt_cfl(L, kappa), bnd.dt_car_distance())
    if dt is None:
        dt = dt_max
    n_steps = max(1, int(np.ceil(T / dt * (1 - 1e-12))))
    if enforce:
        dt = T / n_steps
    traj = [st]
    for _ in range(n_steps):
        st = lxf_lagrangian_step(st, dt, bounds=bnd if enforce else None, kappa=kappa)
        traj.append(st)
    return HarnessResult(traj, bnd, check_bounds(traj, bnd), dt)
