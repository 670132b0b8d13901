"""Follow-the-leader model with traffic dependent stochastic accidents.

Vehicles sit at ordered positions ``a <= x_1 < ... < x_N < b`` on a periodic
road. Each step samples at most one accident event from the pre-step state
and then moves every vehicle by an explicit Euler step of

    x_i' = c_road(x_i) * c_ac(x_i) * v(L / headway_i).

When the leading vehicles cross ``b`` they are wrapped to the front and the
arrays are rotated so the ordering invariant keeps holding; ``ids`` tracks
vehicle identity through these relabelings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from accflow import _kernels
from accflow.core import (
    NO_ACCIDENTS,
    AccidentSet,
    CFLError,
    DegenerateMeasureError,
    InvariantViolation,
    RoadConfig,
    equidistant_positions,
    sample_atoms,
    sample_piecewise_uniform,
)
from accflow.events import AccidentParams, EventLog, as_draws, step_accidents

MicroParams = AccidentParams

# absolute slack for round-off when checking headways against L
HEADWAY_ATOL = 1e-12


@dataclass(frozen=True)
class MicroState:
    x: np.ndarray
    L: float
    road: RoadConfig
    t: float = 0.0
    acc: AccidentSet = NO_ACCIDENTS
    u: int = 0
    l: int = 0
    K_cap: int = 64
    ids: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if self.ids is None:
            object.__setattr__(self, "ids", np.arange(len(x)))
        if not self.L > 0:
            raise ValueError("vehicle length must be positive")

    @property
    def N(self) -> int:
        return len(self.x)

    def headways(self) -> np.ndarray:
        h = np.empty_like(self.x)
        _kernels.headways(self.x, self.road.length, h)
        return h

    def check_invariants(self) -> None:
        """Raise ``InvariantViolation`` on broken ordering, range or headways."""
        x = self.x
        if x[0] < self.road.a or x[-1] >= self.road.b:
            raise InvariantViolation(f"positions leave [a, b) at t={self.t}")
        if np.any(np.diff(x) <= 0):
            raise InvariantViolation(f"vehicle ordering broken at t={self.t}")
        h = self.headways()
        if h.min() < self.L - HEADWAY_ATOL:
            raise InvariantViolation(f"headway {h.min():.17g} < L={self.L} at t={self.t}")
        if len(self.acc) > self.K_cap:
            raise InvariantViolation("more accidents than K_cap")


def initial_state(road: RoadConfig, n: int, L: float, positions: np.ndarray | None = None, **kw) -> MicroState:
    """Equidistant start (or given positions), checked against the headway condition."""
    x = equidistant_positions(road, n) if positions is None else np.asarray(positions, dtype=float)
    st = MicroState(x=x, L=L, road=road, **kw)
    st.check_invariants()
    return st


@dataclass
class Measures:
    """Per-step quantities of the accident position measures."""

    cap: np.ndarray
    h: np.ndarray
    rho: np.ndarray
    flux_mass: np.ndarray  # integral of h_ac over each headway interval
    jump: np.ndarray  # (rho_{i+1} - rho_i)_+ with the wrap term last
    C_F: float
    D_plus: float


def vehicle_capacity(st: MicroState, smooth: bool = False) -> np.ndarray:
    """Total capacity at every vehicle; relies on sorted positions inside the road."""
    smoothed, xp, fp, edges, values = st.road.kernel_args
    cap = np.empty(st.N)
    _kernels.sorted_road_capacity(st.x, smoothed and smooth, xp, fp, edges, values, cap)
    if len(st.acc):
        lo, size, red = st.acc.arrays
        _kernels.sorted_accidents(st.x, st.road.a, st.road.b, lo, size, red, cap)
    return cap


def measures(st: MicroState, smooth: bool = False) -> Measures:
    cap = vehicle_capacity(st, smooth)
    n = st.N
    h, rho, fm, jump = (np.empty(n) for _ in range(4))
    cf, dplus, hmin = _kernels.micro_measures(st.x, st.L, st.road.length, cap, h, rho, fm, jump)
    if hmin < st.L - HEADWAY_ATOL:
        raise InvariantViolation(f"headway {hmin:.17g} below vehicle length {st.L}")
    return Measures(cap, h, rho, fm, jump, cf, dplus)


def local_densities(st: MicroState) -> np.ndarray:
    """``rho_i = L / headway_i`` with the wrapped headway for the last vehicle."""
    h = st.headways()
    if h.min() < st.L - HEADWAY_ATOL:
        raise InvariantViolation(f"headway {h.min():.17g} below vehicle length {st.L}")
    return st.L / h


def cfl_dt(L: float, v_max: float) -> float:
    """Largest collision-free Euler step, ``L / v_max``."""
    if not (L > 0 and v_max > 0):
        raise ValueError("L and v_max must be positive")
    return L / v_max


def _move(st: MicroState, acc: AccidentSet, dt: float, nsub: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions and ids after ``nsub`` Euler substeps of length ``dt`` under ``acc``."""
    x = st.x.copy()
    ids = st.ids.copy()
    lo, size, red = acc.arrays
    _kernels.micro_advance(x, ids, st.L, st.road.a, st.road.b, *st.road.kernel_args, lo, size, red, dt, nsub)
    return x, ids


def _advance(st: MicroState, dt: float, nsub: int = 1) -> MicroState:
    x, ids = _move(st, st.acc, dt, nsub)
    return replace(st, x=x, ids=ids, t=st.t + nsub * dt)


def euler_step(st: MicroState, dt: float) -> MicroState:
    """Move every vehicle by one Euler step; rejects steps above ``L / v_max``."""
    bound = cfl_dt(st.L, st.road.max_factor)
    if dt > bound * (1 + 1e-12):
        raise CFLError(f"dt={dt} exceeds collision-free bound L/v_max={bound}")
    return _advance(st, dt)


def substeps(dt: float, L: float, v_max: float) -> int:
    """Number of equal Euler substeps needed to keep ``dt / n <= L / v_max``."""
    return max(1, math.ceil(dt / cfl_dt(L, v_max) * (1 - 1e-12)))


def advance_positions(st: MicroState, dt: float, acc: AccidentSet | None = None, t_end: float | None = None) -> MicroState:
    """Advance over ``dt`` with as many collision-free Euler substeps as needed.

    ``acc`` replaces the accident set before moving; ``t_end`` overrides the
    accumulated clock (drivers use it to avoid drift).
    """
    acc = st.acc if acc is None else acc
    n = substeps(dt, st.L, st.road.max_factor)
    x, ids = _move(st, acc, dt / n, n)
    return replace(st, x=x, ids=ids, acc=acc, t=st.t + dt if t_end is None else t_end)


def flux_constant(st: MicroState, smooth: bool = False) -> float:
    """``C_F = sum_i c(x_i) rho_i v(rho_i) headway_i``."""
    return measures(st, smooth).C_F


def jam_constant(st: MicroState) -> float:
    """``D rho_+``: total positive increase of the local density, wrap term included."""
    rho = local_densities(st)
    return float(np.maximum(np.roll(rho, -1) - rho, 0.0).sum())


def _type1(st: MicroState, m: Measures, mode: str) -> Callable[[float], float]:
    def sample(u: float) -> float:
        if mode == "discrete":
            return sample_atoms(st.x, m.flux_mass, u)
        return float(st.road.wrap(sample_piecewise_uniform(st.x, m.h, m.flux_mass, u)))

    return sample


def _type2(st: MicroState, m: Measures) -> Callable[[float], float]:
    return lambda u: sample_atoms(st.x, m.jump, u)


def sample_position_type1(st: MicroState, U: float, mode: str = "continuous", smooth: bool = False) -> float:
    """Accident position from the high-flux measure ``h_ac / C_F``.

    ``mode="continuous"`` inverts the piecewise linear CDF of the density that
    is constant on each headway interval; ``mode="discrete"`` puts the
    interval masses as atoms on the vehicle positions.
    """
    return _type1(st, measures(st, smooth), mode)(U)


def sample_position_type2(st: MicroState, U: float) -> float:
    """Accident position at ``x_i`` with probability ``(rho_{i+1} - rho_i)_+ / D rho_+``."""
    return _type2(st, measures(st))(U)


def sample_position(st: MicroState, beta: float, U_type: float, U_pos: float, mode: str = "continuous", smooth: bool = False) -> float:
    """Mixture of both measures; falls back to the other type if the chosen one is degenerate."""
    m = measures(st, smooth)
    first, second = (_type1(st, m, mode), _type2(st, m))
    if not U_type < beta:
        first, second = second, first
    try:
        return first(U_pos)
    except DegenerateMeasureError:
        return second(U_pos)


def event_rate(st: MicroState, p: AccidentParams) -> float:
    """``psi = lambda_F C_F + lambda_D D rho_+ + lambda_R M``."""
    m = measures(st, p.smooth_measure)
    return p.lambda_F * m.C_F + p.lambda_D * m.D_plus + p.lambda_R * len(st.acc)


def step_events(
    st: MicroState, dt: float, p: AccidentParams, rng, log_to: EventLog | None = None, t_end: float | None = None
) -> MicroState:
    """One step of the micro process: event from the pre-step state, then motion.

    ``rng`` is a ``numpy.random.Generator`` or a block of ``N_DRAWS`` uniforms.
    Motion uses the post-event accident set.
    """
    draws = as_draws(rng)
    m = measures(st, p.smooth_measure)
    rate_new = p.lambda_F * m.C_F + p.lambda_D * m.D_plus
    acc, u, l = step_accidents(
        st.acc, rate_new, dt, p, draws,
        _type1(st, m, p.type1_mode), _type2(st, m), p.beta, st.t, log_to,
    )
    n = substeps(dt, st.L, st.road.max_factor)
    x, ids = _move(st, acc, dt / n, n)
    return replace(st, x=x, ids=ids, acc=acc, u=u, l=l, t=st.t + dt if t_end is None else t_end)


@dataclass
class MicroRun:
    state: MicroState
    log: EventLog
    times: list[float] = field(default_factory=list)
    snapshots: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def simulate(
    st: MicroState,
    p: AccidentParams,
    dt: float,
    draws: np.ndarray,
    record_every: int | None = None,
    check: bool = False,
    on_step: Callable[[int, MicroState], None] | None = None,
) -> MicroRun:
    """Run ``len(draws)`` steps; row ``n`` of ``draws`` feeds step ``n``.

    ``record_every`` stores ``(ids, x)`` snapshots (including ``t = 0``);
    ``check`` verifies the state invariants after each step.
    """
    run = MicroRun(state=st, log=EventLog())
    t0 = st.t
    if record_every:
        run.times.append(st.t)
        run.snapshots.append((st.ids.copy(), st.x.copy()))
    for n in range(len(draws)):
        st = step_events(st, dt, p, draws[n], run.log, t_end=t0 + (n + 1) * dt)
        if check:
            st.check_invariants()
        if on_step is not None:
            on_step(n + 1, st)
        if record_every and (n + 1) % record_every == 0:
            run.times.append(st.t)
            run.snapshots.append((st.ids.copy(), st.x.copy()))
    run.state = st
    return run
