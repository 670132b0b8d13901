"""LWR model with space dependent flux and a stochastic accident process.

Cells ``[x_{i-1/2}, x_{i+1/2})`` with ``x_{1/2} = a`` carry the cell means
``rho_i``; the capacity ``c_i`` is the total capacity at the cell centre.
Both solvers are conservative on the periodic road.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from accflow import _kernels
from accflow.core import (
    NO_ACCIDENTS,
    RHO_CRIT,
    AccidentSet,
    CFLError,
    InvariantViolation,
    RoadConfig,
    as_density,
    sample_atoms,
    sample_piecewise_uniform,
    total_capacity,
)
from accflow.events import AccidentParams, EventLog, as_draws, step_accidents

log = logging.getLogger(__name__)

# tolerated excursion outside [0, 1] before clamping turns into an error
RANGE_ATOL = 1e-12


class SolverKind(str, enum.Enum):
    LAX_FRIEDRICHS = "lxf"
    GODUNOV = "godunov"

    @classmethod
    def parse(cls, name) -> SolverKind:
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "").replace("_", "")
        aliases = {"lxf": cls.LAX_FRIEDRICHS, "laxfriedrichs": cls.LAX_FRIEDRICHS, "godunov": cls.GODUNOV}
        if key not in aliases:
            raise ValueError(f"unknown solver {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class MacroState:
    rho: np.ndarray
    dx: float
    road: RoadConfig
    t: float = 0.0
    acc: AccidentSet = NO_ACCIDENTS
    smooth: bool = False
    clamped: int = 0
    cap: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if self.cap is None:
            object.__setattr__(self, "cap", total_capacity(self.cell_centers, self.acc, self.road, smoothed=self.smooth))

    @property
    def K(self) -> int:
        return len(self.rho)

    @property
    def cell_centers(self) -> np.ndarray:
        return self.road.a + (np.arange(len(self.rho)) + 0.5) * self.dx

    @property
    def interfaces(self) -> np.ndarray:
        """Left interface of every cell, ``x_{i-1/2}``."""
        return self.road.a + np.arange(len(self.rho)) * self.dx

    def with_accidents(self, acc: AccidentSet) -> MacroState:
        if acc is self.acc:
            return self
        return replace(self, acc=acc, cap=None)

    def density_at(self, x) -> np.ndarray:
        """Piecewise constant density; cells are closed on the left."""
        xw = self.road.wrap(x)
        idx = np.floor((xw - self.road.a) / self.dx).astype(int)
        return self.rho[np.clip(idx, 0, self.K - 1)]


def cell_count(road: RoadConfig, dx: float) -> int:
    k = int(round(road.length / dx))
    if k < 1 or abs(k * dx - road.length) > 1e-9 * road.length:
        raise ValueError(f"dx={dx} does not divide the road length {road.length}")
    return k


def init_cells(rho0, road: RoadConfig, dx: float, subsamples: int = 16, **kw) -> MacroState:
    """Cell means of ``rho0`` by midpoint quadrature with ``subsamples`` points per cell."""
    if subsamples < 16:
        raise ValueError("use at least 16 subsamples per cell")
    k = cell_count(road, dx)
    f = as_density(rho0)
    offsets = (np.arange(subsamples) + 0.5) / subsamples
    pts = road.a + (np.arange(k)[:, None] + offsets[None, :]) * dx
    vals = np.asarray(f(pts), dtype=float)
    if np.any(vals < 0) or np.any(vals > 1):
        raise ValueError("initial density must take values in [0, 1]")
    return MacroState(rho=vals.mean(axis=1), dx=dx, road=road, **kw)


def _check_cfl(st: MacroState, dt: float) -> float:
    lam = dt / st.dx
    # Lipschitz constant of c * rho * (1 - rho) in rho on [0, 1] is max c
    if lam * st.cap.max() > 1 + 1e-12:
        raise CFLError(f"CFL number {lam * st.cap.max():.4g} > 1")
    return lam


def _finish(st: MacroState, rho: np.ndarray, dt: float) -> MacroState:
    lo, hi = rho.min(), rho.max()
    clamped = st.clamped
    if lo < 0.0 or hi > 1.0:
        if lo < -RANGE_ATOL or hi > 1 + RANGE_ATOL:
            raise InvariantViolation(f"density left [0, 1]: min={lo:.3g}, max={hi:.3g} at t={st.t}")
        bad = int(np.count_nonzero((rho < 0.0) | (rho > 1.0)))
        clamped += bad
        log.debug("clamped %d cells back into [0, 1] at t=%.6g", bad, st.t)
        rho = np.clip(rho, 0.0, 1.0)
    return replace(st, rho=rho, t=st.t + dt, clamped=clamped)


def lxf_step(st: MacroState, dt: float) -> MacroState:
    """Lax-Friedrichs step ``(rho_{i+1}+rho_{i-1})/2 - dt/(2dx) (f_{i+1} - f_{i-1})``."""
    lam = _check_cfl(st, dt)
    out = np.empty_like(st.rho)
    _kernels.lxf_update(st.rho, st.cap, lam, out)
    return _finish(st, out, dt)


def godunov_flux(rho_left, rho_right, c_left, c_right):
    """Interface flux ``min(f(c_r, max(rho_r, rho*)), f(c_l, min(rho_l, rho*)))``."""
    r_right = np.maximum(rho_right, RHO_CRIT)
    r_left = np.minimum(rho_left, RHO_CRIT)
    return np.minimum(c_right * r_right * (1 - r_right), c_left * r_left * (1 - r_left))


def godunov_step(st: MacroState, dt: float) -> MacroState:
    """Godunov step with the supply/demand interface flux."""
    lam = _check_cfl(st, dt)
    out = np.empty_like(st.rho)
    fluxes = np.empty_like(st.rho)
    _kernels.godunov_update(st.rho, st.cap, lam, RHO_CRIT, fluxes, out)
    return _finish(st, out, dt)


SOLVERS: dict[SolverKind, Callable[[MacroState, float], MacroState]] = {
    SolverKind.LAX_FRIEDRICHS: lxf_step,
    SolverKind.GODUNOV: godunov_step,
}


@dataclass
class MacroMeasures:
    flux_mass: np.ndarray
    jump: np.ndarray
    C_F: float
    D_plus: float


def measures(st: MacroState) -> MacroMeasures:
    fm = np.empty(st.K)
    jump = np.empty(st.K)
    cf, dplus = _kernels.macro_measures(st.rho, st.cap, st.dx, fm, jump)
    return MacroMeasures(fm, jump, cf, dplus)


def macro_flux_constant(st: MacroState) -> float:
    """Rectangle rule for ``int c(x) rho (1 - rho) dx``."""
    return measures(st).C_F


def macro_jam_constant(st: MacroState) -> float:
    """Total positive jump of the cell means across all (wrapped) interfaces."""
    return measures(st).D_plus


def _type1(st: MacroState, m: MacroMeasures) -> Callable[[float], float]:
    widths = np.full(st.K, st.dx)
    return lambda u: sample_piecewise_uniform(st.interfaces, widths, m.flux_mass, u)


def _type2(st: MacroState, m: MacroMeasures) -> Callable[[float], float]:
    return lambda u: sample_atoms(st.interfaces, m.jump, u)


def macro_sample_position_type1(st: MacroState, U: float) -> float:
    """Cell chosen with weight ``c_i rho_i (1 - rho_i) dx``, uniform inside it."""
    return _type1(st, measures(st))(U)


def macro_sample_position_type2(st: MacroState, U: float) -> float:
    """Interface ``x_{i-1/2}`` chosen with weight ``(rho_i - rho_{i-1})_+``."""
    return _type2(st, measures(st))(U)


def macro_event_rate(st: MacroState, params: AccidentParams) -> float:
    m = measures(st)
    return params.lambda_F * m.C_F + params.lambda_D * m.D_plus + params.lambda_R * len(st.acc)


def macro_step_events(
    st: MacroState,
    dt: float,
    params: AccidentParams,
    rng,
    solver: SolverKind | str = SolverKind.GODUNOV,
    log_to: EventLog | None = None,
) -> MacroState:
    """Event from the pre-step state, then one solver step with the updated capacity."""
    draws = as_draws(rng)
    m = measures(st)
    rate_new = params.lambda_F * m.C_F + params.lambda_D * m.D_plus
    acc, _, _ = step_accidents(
        st.acc, rate_new, dt, params, draws, _type1(st, m), _type2(st, m), params.macro_beta, st.t, log_to
    )
    st = st.with_accidents(acc)
    return SOLVERS[SolverKind.parse(solver)](st, dt)


def total_mass(st: MacroState) -> float:
    return float(np.sum(st.rho) * st.dx)


@dataclass
class MacroRun:
    state: MacroState
    log: EventLog
    acc_changes: list[tuple[int, AccidentSet]] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)


def simulate(
    st: MacroState,
    params: AccidentParams,
    dt: float,
    draws: np.ndarray,
    solver: SolverKind | str = SolverKind.GODUNOV,
    record_every: int | None = None,
    on_step: Callable[[int, MacroState], None] | None = None,
) -> MacroRun:
    """Run ``len(draws)`` steps. ``acc_changes`` lists ``(step, accident set)``
    for every step whose motion used a new accident set."""
    solver = SolverKind.parse(solver)
    run = MacroRun(state=st, log=EventLog())
    t0 = st.t
    if record_every:
        run.times.append(st.t)
        run.snapshots.append(st.rho.copy())
    for n in range(len(draws)):
        before = st.acc
        st = macro_step_events(st, dt, params, draws[n], solver, run.log)
        st = replace(st, t=t0 + (n + 1) * dt)
        if st.acc is not before:
            run.acc_changes.append((n, st.acc))
        if on_step is not None:
            on_step(n + 1, st)
        if record_every and (n + 1) % record_every == 0:
            run.times.append(st.t)
            run.snapshots.append(st.rho.copy())
    run.state = st
    return run
