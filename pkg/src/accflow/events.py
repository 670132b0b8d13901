"""Discrete-time accident event kernel shared by all models.

Every time step consumes exactly ``N_DRAWS`` uniforms in a fixed order, used
or not, so two models fed the same stream see the same random element:

    event, kind, type, position, size, capacity, removal
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from accflow.core import (
    C_MAX_DEFAULT,
    Accident,
    AccidentSet,
    DegenerateMeasureError,
    Discrete,
    Uniform,
)

log = logging.getLogger(__name__)

DRAW_EVENT, DRAW_KIND, DRAW_TYPE, DRAW_POSITION, DRAW_SIZE, DRAW_CAPACITY, DRAW_REMOVAL = range(7)
N_DRAWS = 7

ADD, NONE, REMOVE = 1, 0, -1


@dataclass(frozen=True)
class AccidentParams:
    """Rates and distributions of the accident process.

    ``beta`` is the share of type-1 (high flux) accidents; ``beta_macro``
    overrides it for the macroscopic model when set. ``type1_mode`` selects
    the continuous piecewise-constant micro measure or the atomic variant,
    and ``smooth_measure`` whether micro measures see the smoothed road
    capacity.
    """

    lambda_F: float = 1 / 160
    lambda_D: float = 1 / 50
    lambda_R: float = 0.25
    beta: float = 0.5
    size_dist: Uniform | Discrete = Uniform(0.2, 1.0)
    cap_dist: Uniform | Discrete = Discrete((0.5, 0.99), (0.5, 0.5))
    c_max: float = C_MAX_DEFAULT
    K_cap: int = 64
    beta_macro: float | None = None
    type1_mode: str = "continuous"
    smooth_measure: bool = False

    def __post_init__(self):
        for name in ("lambda_F", "lambda_D", "lambda_R"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("beta", "beta_macro"):
            val = getattr(self, name)
            if val is not None and not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.c_max < 1.0:
            raise ValueError("c_max must lie in [0, 1)")
        lo, hi = self.size_dist.support
        if lo <= 0:
            raise ValueError("accident sizes must be positive")
        lo, hi = self.cap_dist.support
        if lo < 0 or hi > self.c_max:
            raise ValueError(f"capacity reductions must lie in [0, c_max={self.c_max}]")
        if self.type1_mode not in ("continuous", "discrete"):
            raise ValueError("type1_mode must be 'continuous' or 'discrete'")
        if self.K_cap < 1:
            raise ValueError("K_cap must be >= 1")

    @classmethod
    def from_shares(cls, k1: float, k2: float, beta: float, **kw) -> AccidentParams:
        """Rates tied to the type share: ``lambda_F = beta*k1``, ``lambda_D = (1-beta)*k2``."""
        return cls(lambda_F=beta * k1, lambda_D=(1 - beta) * k2, beta=beta, **kw)

    @property
    def macro_beta(self) -> float:
        return self.beta if self.beta_macro is None else self.beta_macro

    def without_accidents(self) -> AccidentParams:
        return AccidentParams(
            lambda_F=0.0, lambda_D=0.0, lambda_R=self.lambda_R, beta=self.beta,
            size_dist=self.size_dist, cap_dist=self.cap_dist, c_max=self.c_max,
            K_cap=self.K_cap, beta_macro=self.beta_macro,
            type1_mode=self.type1_mode, smooth_measure=self.smooth_measure,
        )


@dataclass(frozen=True)
class AccidentEvent:
    t: float
    event: str  # "add" or "remove"
    j: int  # one-based accident index
    p: float
    s: float
    c: float


@dataclass
class EventLog:
    events: list[AccidentEvent] = field(default_factory=list)

    def append(self, ev: AccidentEvent) -> None:
        self.events.append(ev)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __eq__(self, other):
        return isinstance(other, EventLog) and self.events == other.events


def as_draws(rng) -> np.ndarray:
    """One step's block of uniforms from a Generator, or a precomputed block."""
    if isinstance(rng, np.random.Generator):
        return rng.random(N_DRAWS)
    draws = np.asarray(rng, dtype=float)
    if draws.shape != (N_DRAWS,):
        raise ValueError(f"expected {N_DRAWS} draws, got shape {draws.shape}")
    return draws


def draw_stream(seed, n_steps: int) -> np.ndarray:
    """Common random numbers for ``n_steps`` steps: an ``(n_steps, N_DRAWS)`` array.

    Row ``n`` equals what ``rng.random(N_DRAWS)`` returns on the ``n``-th call
    with the same seed, so stepwise and batched consumption agree.
    """
    rng = np.random.default_rng(seed)
    return rng.random((n_steps, N_DRAWS))


def event_probabilities(rate_new: float, M: int, lambda_R: float, dt: float) -> tuple[float, float, float]:
    """``(P(u=0), P(u=+1), P(u=-1))`` for one step, with the event probability clamped at 1."""
    psi = rate_new + M * lambda_R
    p = min(dt * psi, 1.0)
    if psi <= 0:
        return 1.0, 0.0, 0.0
    return 1.0 - p, p * rate_new / psi, p * M * lambda_R / psi


def step_accidents(
    acc: AccidentSet,
    rate_new: float,
    dt: float,
    params: AccidentParams,
    draws: np.ndarray,
    sample_type1: Callable[[float], float],
    sample_type2: Callable[[float], float],
    beta: float,
    t: float,
    log_to: EventLog | None = None,
) -> tuple[AccidentSet, int, int]:
    """Sample the event of one step and apply it to the accident set.

    Returns the new set, the event indicator ``u`` and the one-based index
    ``l`` of the added or removed accident (0 when nothing happened).
    """
    M = len(acc)
    psi = rate_new + M * params.lambda_R
    p_event = dt * psi
    if p_event > 1.0:
        log.warning("event probability %.3g > 1 at t=%.6g; clamped to 1", p_event, t)
        p_event = 1.0
    if not draws[DRAW_EVENT] < p_event:
        return acc, NONE, 0

    if draws[DRAW_KIND] < rate_new / psi:
        if M >= params.K_cap:
            log.warning("accident cap K=%d reached at t=%.6g; new accident dropped", params.K_cap, t)
            return acc, NONE, 0
        first, second = (sample_type1, sample_type2) if draws[DRAW_TYPE] < beta else (sample_type2, sample_type1)
        try:
            pos = first(draws[DRAW_POSITION])
        except DegenerateMeasureError:
            try:
                pos = second(draws[DRAW_POSITION])
            except DegenerateMeasureError:
                return acc, NONE, 0
        new = Accident(
            p=float(pos),
            s=float(params.size_dist.ppf(draws[DRAW_SIZE])),
            c=float(params.cap_dist.ppf(draws[DRAW_CAPACITY])),
        )
        if log_to is not None:
            log_to.append(AccidentEvent(t, "add", M + 1, new.p, new.s, new.c))
        return acc.add(new), ADD, M + 1

    if M == 0:  # unreachable: removal has probability zero without accidents
        return acc, NONE, 0
    l = min(int(draws[DRAW_REMOVAL] * M), M - 1)
    gone = acc[l]
    if log_to is not None:
        log_to.append(AccidentEvent(t, "remove", l + 1, gone.p, gone.s, gone.c))
    return acc.remove(l), REMOVE, l + 1
