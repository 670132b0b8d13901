"""Follow-the-leader vehicles driven by the accidents of a concurrent LWR run.

The macroscopic model is the only event source: each step it samples its
accident event and advances, and the vehicles then move with the capacity of
the macroscopic accident set. Because the vehicles never feed back, the
micro side can also be replayed afterwards from a recorded accident history.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from accflow.core import AccidentSet, InvariantViolation, RoadConfig
from accflow.events import AccidentParams, EventLog, as_draws
from accflow.macro import MacroRun, MacroState, SolverKind, macro_step_events
from accflow.macro import simulate as simulate_macro
from accflow.micro import HEADWAY_ATOL, MicroState, advance_positions


@dataclass(frozen=True)
class CoupledState:
    macro: MacroState
    micro: MicroState

    def __post_init__(self):
        if self.micro.acc is not self.macro.acc:
            object.__setattr__(self, "micro", replace(self.micro, acc=self.macro.acc))

    @property
    def t(self) -> float:
        return self.macro.t


def coupled_step(
    st: CoupledState,
    dt: float,
    params: AccidentParams,
    rng,
    solver: SolverKind | str = SolverKind.GODUNOV,
    log_to: EventLog | None = None,
    t_end: float | None = None,
) -> CoupledState:
    """Macro events and solver step, then vehicle motion under the macro accident set.

    ``t_end`` overrides the accumulated clock as in ``advance_positions``.
    """
    mac = macro_step_events(st.macro, dt, params, as_draws(rng), solver, log_to)
    if t_end is not None:
        mac = replace(mac, t=t_end)
    return CoupledState(mac, advance_positions(st.micro, dt, acc=mac.acc, t_end=mac.t))


class MicroDensityField:
    """Piecewise constant local density of ordered vehicle positions.

    The value is ``rho_i`` on ``[x_i, x_{i+1})`` and ``rho_N`` on
    ``[x_N, b]`` together with ``[a, x_1)``.
    """

    def __init__(self, positions: np.ndarray, L: float, road: RoadConfig):
        x = np.asarray(positions, dtype=float)
        if np.any(np.diff(x) <= 0):
            raise InvariantViolation("positions must be strictly increasing")
        h = np.append(np.diff(x), x[0] + road.length - x[-1])
        if h.min() < L - HEADWAY_ATOL:
            raise InvariantViolation(f"headway {h.min():.17g} below vehicle length {L}")
        self.x = x
        self.rho = L / h
        self.road = road

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        # b itself belongs to the last vehicle's plateau, so no wrapping of b
        inside = (pts >= self.road.a) & (pts <= self.road.b)
        q = np.where(inside, pts, self.road.wrap(pts))
        idx = np.searchsorted(self.x, q, side="right") - 1
        return self.rho[idx]  # idx == -1 picks the last vehicle


def micro_density_field(positions, L: float, road: RoadConfig) -> MicroDensityField:
    return MicroDensityField(positions, L, road)


def replay_micro(
    st: MicroState,
    dt: float,
    n_steps: int,
    acc_changes: Sequence[tuple[int, AccidentSet]],
    on_step: Callable[[int, MicroState], None] | None = None,
) -> MicroState:
    """Move vehicles through ``n_steps`` steps under a recorded accident history.

    ``acc_changes`` holds ``(step, set)`` pairs: from step ``step`` on the
    motion uses ``set``. The arithmetic is that of ``coupled_step``, so the
    result is bit-identical to running the coupled model.
    """
    changes = dict(acc_changes)
    t0 = st.t
    for n in range(n_steps):
        st = advance_positions(st, dt, acc=changes.get(n), t_end=t0 + (n + 1) * dt)
        if on_step is not None:
            on_step(n + 1, st)
    return st


@dataclass
class CoupledRun:
    macro: MacroRun
    micro: MicroState
    times: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)

    @property
    def log(self) -> EventLog:
        return self.macro.log


def simulate_coupled(
    st: CoupledState,
    params: AccidentParams,
    dt: float,
    draws: np.ndarray,
    solver: SolverKind | str = SolverKind.GODUNOV,
    record_every: int | None = None,
) -> CoupledRun:
    """Run the macro model on ``draws`` and move the vehicles along with it."""
    mac = simulate_macro(st.macro, params, dt, draws, solver, record_every=record_every)
    times, positions = [], []

    def keep(n: int, mic: MicroState) -> None:
        if record_every and n % record_every == 0:
            times.append(mic.t)
            positions.append(mic.x.copy())

    if record_every:
        keep(0, st.micro)
    mic = replay_micro(st.micro, dt, len(draws), mac.acc_changes, on_step=keep)
    return CoupledRun(mac, mic, times, positions)
