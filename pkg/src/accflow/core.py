"""Shared domain types: road geometry, accidents and capacity fields.

The capacity seen by traffic at a position ``x`` is the product of the road
capacity (piecewise constant speed limits, optionally linearly smoothed) and
the accident capacity ``prod_j (1 - c_j * 1[p_j - s_j/2, p_j + s_j/2](x))``.
Both factors live on a periodic road ``[a, b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from accflow import _kernels

RHO_CRIT = 0.5  # argmax of rho * (1 - rho)
C_MAX_DEFAULT = 0.99


class DegenerateMeasureError(ValueError):
    """Raised when a position measure has zero total mass."""


class CFLError(ValueError):
    """Raised when a time step violates a stability or collision bound."""


class InvariantViolation(RuntimeError):
    """Raised when a model state breaks one of its invariants."""


def velocity(rho):
    """LWR velocity ``max(0, 1 - rho)``."""
    return np.maximum(0.0, 1.0 - np.asarray(rho, dtype=float))


def flux(c, rho):
    """Space dependent flux ``c * rho * v(rho)``."""
    rho = np.asarray(rho, dtype=float)
    return np.asarray(c, dtype=float) * rho * velocity(rho)


def lagrangian_velocity(w):
    """Velocity as a function of the inverse density, ``v(1/w)``."""
    return velocity(1.0 / np.asarray(w, dtype=float))


@dataclass(frozen=True)
class RoadConfig:
    """Periodic road ``[a, b)`` with a piecewise constant capacity.

    ``segments`` holds ``(lo, hi, factor)`` triples overriding ``base_factor``
    on ``[lo, hi)``. At every jump of the resulting step function the smoothed
    capacity ramps linearly over ``[jump - w/2, jump + w/2]`` where ``w`` is
    ``smoothing_width``.
    """

    a: float = -10.0
    b: float = 10.0
    base_factor: float = 1.0
    segments: tuple[tuple[float, float, float], ...] = ()
    smoothing_width: float = 0.02
    periodic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(tuple(map(float, s)) for s in self.segments))
        if not self.b > self.a:
            raise ValueError(f"road needs b > a, got a={self.a}, b={self.b}")
        if not self.periodic:
            raise ValueError("only periodic roads are supported")
        if self.base_factor <= 0:
            raise ValueError("base_factor must be positive")
        if self.smoothing_width < 0:
            raise ValueError("smoothing_width must be >= 0")
        spans = sorted(self.segments)
        for lo, hi, factor in spans:
            if not (self.a <= lo < hi <= self.b):
                raise ValueError(f"segment [{lo}, {hi}) not inside [{self.a}, {self.b})")
            if factor <= 0:
                raise ValueError(f"segment factor must be positive, got {factor}")
        for (_, hi, _), (lo, _, _) in zip(spans, spans[1:]):
            if lo < hi:
                raise ValueError("road segments overlap")
        jumps = self.jumps
        if self.smoothing_width > 0 and len(jumps) > 1:
            pts = np.sort(np.array([j[0] for j in jumps]))
            gaps = np.diff(np.append(pts, pts[0] + self.length))
            if gaps.min() <= self.smoothing_width:
                raise ValueError("smoothing ramps of neighbouring jumps would overlap")

    @property
    def length(self) -> float:
        return self.b - self.a

    def wrap(self, x):
        """Map positions periodically into ``[a, b)``."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        _kernels.wrap(x.reshape(-1), self.a, self.b, out.reshape(-1))
        return out if x.ndim else out[()]

    @cached_property
    def step_function(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints ``a = e_0 < ... < e_m = b`` and the value on each piece."""
        edges = [self.a]
        values = []
        cursor = self.a
        for lo, hi, factor in sorted(self.segments):
            if lo > cursor:
                values.append(self.base_factor)
                edges.append(lo)
            values.append(factor)
            edges.append(hi)
            cursor = hi
        if cursor < self.b:
            values.append(self.base_factor)
            edges.append(self.b)
        return np.array(edges), np.array(values)

    @cached_property
    def jumps(self) -> tuple[tuple[float, float, float], ...]:
        """``(position, left value, right value)`` for every discontinuity."""
        edges, values = self.step_function
        out = []
        for k in range(1, len(values)):
            if values[k] != values[k - 1]:
                out.append((float(edges[k]), float(values[k - 1]), float(values[k])))
        if values[0] != values[-1]:
            out.append((float(self.a), float(values[-1]), float(values[0])))
        return tuple(out)

    @cached_property
    def _smooth_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * self.smoothing_width
        xs, fs = [], []
        for pos, left, right in self.jumps:
            xs += [pos - half, pos + half]
            fs += [left, right]
        order = np.argsort(xs, kind="stable")
        xs = np.asarray(xs)[order]
        fs = np.asarray(fs)[order]
        # three periods so every wrapped point is bracketed
        xp = np.concatenate([xs - self.length, xs, xs + self.length])
        fp = np.concatenate([fs, fs, fs])
        return xp, fp

    @property
    def max_factor(self) -> float:
        return float(self.step_function[1].max())

    @property
    def min_factor(self) -> float:
        return float(self.step_function[1].min())

    @cached_property
    def kernel_args(self) -> tuple:
        """``(smoothed, xp, fp, edges, values)`` describing the motion capacity for compiled loops."""
        edges, values = self.step_function
        if self.jumps and self.smoothing_width > 0:
            xp, fp = self._smooth_nodes
            return True, xp, fp, edges, values
        return False, edges[:1], values[:1], edges, values

    def capacity(self, x, smoothed: bool = True) -> np.ndarray:
        """Road capacity at ``x`` (wrapped onto the road)."""
        xw = self.wrap(x)
        if not self.jumps:
            return np.full(np.shape(xw), float(self.step_function[1][0]))
        if smoothed and self.smoothing_width > 0:
            xp, fp = self._smooth_nodes
            return np.interp(xw, xp, fp)
        edges, values = self.step_function
        flat = np.atleast_1d(xw).reshape(-1)
        out = np.empty(flat.shape)
        _kernels.road_step(flat, edges, values, out)
        return out.reshape(np.shape(xw))


REFERENCE_ROAD = RoadConfig(a=-10.0, b=10.0, base_factor=7.0, segments=((0.0, 5.0, 5.0),), smoothing_width=0.02)


@dataclass(frozen=True)
class Accident:
    """An active accident centred at ``p`` with extent ``s`` and capacity reduction ``c``."""

    p: float
    s: float
    c: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"accident size must be positive, got {self.s}")
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"capacity reduction must lie in [0, 1), got {self.c}")


@dataclass(frozen=True)
class AccidentSet:
    """Ordered, immutable collection of active accidents."""

    accidents: tuple[Accident, ...] = ()

    def __len__(self) -> int:
        return len(self.accidents)

    def __iter__(self):
        return iter(self.accidents)

    def __getitem__(self, j: int) -> Accident:
        return self.accidents[j]

    @property
    def M(self) -> int:
        return len(self.accidents)

    def add(self, acc: Accident) -> AccidentSet:
        return AccidentSet(self.accidents + (acc,))

    def remove(self, j: int) -> AccidentSet:
        """Drop the accident at zero-based index ``j``."""
        if not 0 <= j < len(self.accidents):
            raise IndexError(f"no accident with index {j}")
        return AccidentSet(self.accidents[:j] + self.accidents[j + 1 :])

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Left ends, sizes and reductions as float arrays."""
        p = np.array([a.p for a in self.accidents], dtype=float)
        s = np.array([a.s for a in self.accidents], dtype=float)
        c = np.array([a.c for a in self.accidents], dtype=float)
        return p - 0.5 * s, s, c


NO_ACCIDENTS = AccidentSet()


def road_capacity(x, cfg: RoadConfig, smoothed: bool = True) -> np.ndarray:
    return cfg.capacity(x, smoothed=smoothed)


def accident_capacity(x, acc: AccidentSet, cfg: RoadConfig) -> np.ndarray:
    """Product of ``1 - c_j`` over the accidents whose (wrapped) interval covers ``x``."""
    xw = np.atleast_1d(cfg.wrap(x)).astype(float)
    out = np.ones_like(xw)
    if len(acc):
        lo, s, c = acc.arrays
        _kernels.apply_accidents(xw, cfg.length, lo, s, c, out)
    return out if np.ndim(x) else out[0]


def total_capacity(x, acc: AccidentSet, cfg: RoadConfig, smoothed: bool = True) -> np.ndarray:
    return road_capacity(x, cfg, smoothed) * accident_capacity(x, acc, cfg)


def lipschitz_estimate(func: Callable[[np.ndarray], np.ndarray], a: float, b: float, n: int = 200_001) -> float:
    """Largest finite-difference slope of ``func`` on a uniform grid over ``[a, b]``."""
    x = np.linspace(a, b, n)
    y = np.asarray(func(x), dtype=float)
    return float(np.max(np.abs(np.diff(y))) / (x[1] - x[0]))


# -- distributions for accident size and capacity reduction -------------------


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise ValueError("Uniform needs hi >= lo")

    def ppf(self, u: float) -> float:
        return self.lo + (self.hi - self.lo) * u

    @property
    def support(self) -> tuple[float, float]:
        return self.lo, self.hi


@dataclass(frozen=True)
class Discrete:
    """Finite mixture of point masses, sampled by inverse transform."""

    values: tuple[float, ...]
    weights: tuple[float, ...]
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        weights = np.asarray(self.weights, dtype=float)
        if len(values) != len(weights) or not len(values):
            raise ValueError("Discrete needs matching, non-empty values and weights")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("Discrete weights must be nonnegative with positive sum")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", tuple(weights / weights.sum()))
        object.__setattr__(self, "_cdf", np.cumsum(weights) / weights.sum())

    def ppf(self, u: float) -> float:
        k = int(np.searchsorted(self._cdf, u, side="right"))
        return self.values[min(k, len(self.values) - 1)]

    @property
    def support(self) -> tuple[float, float]:
        live = [v for v, w in zip(self.values, self.weights) if w > 0]
        return min(live), max(live)


def point_mass(value: float) -> Discrete:
    return Discrete((value,), (1.0,))


def distribution_from_spec(spec) -> Uniform | Discrete:
    """Build a distribution from ``{"uniform": [lo, hi]}``, ``{"discrete": {...}}`` or a number."""
    if isinstance(spec, (Uniform, Discrete)):
        return spec
    if isinstance(spec, (int, float)):
        return point_mass(float(spec))
    if "uniform" in spec:
        lo, hi = spec["uniform"]
        return Uniform(float(lo), float(hi))
    if "discrete" in spec:
        d = spec["discrete"]
        return Discrete(tuple(d["values"]), tuple(d["weights"]))
    raise ValueError(f"unknown distribution spec {spec!r}")


def distribution_to_spec(dist: Uniform | Discrete) -> dict:
    if isinstance(dist, Uniform):
        return {"uniform": [dist.lo, dist.hi]}
    return {"discrete": {"values": list(dist.values), "weights": list(dist.weights)}}


# -- inverse transform samplers ------------------------------------------------


def _pick(weights: np.ndarray, u: float) -> tuple[int, float]:
    """Index chosen by ``u`` and the leftover mass inside that bin."""
    cum = np.cumsum(weights)
    total = cum[-1] if len(cum) else 0.0
    if not total > 0:
        raise DegenerateMeasureError("position measure has zero total mass")
    target = u * total
    k = int(np.searchsorted(cum, target, side="right"))
    if k >= len(weights):
        # u * total rounded up to total; take the last bin with mass
        k = int(np.flatnonzero(weights > 0)[-1])
        return k, weights[k]
    prev = cum[k - 1] if k else 0.0
    return k, target - prev


def sample_atoms(points: np.ndarray, weights: np.ndarray, u: float) -> float:
    """Inverse transform sample from ``sum_k weights_k * delta(points_k)``."""
    k, _ = _pick(np.asarray(weights, dtype=float), u)
    return float(points[k])


def sample_piecewise_uniform(starts: np.ndarray, widths: np.ndarray, masses: np.ndarray, u: float) -> float:
    """Inverse transform sample from a density constant on ``[starts_k, starts_k + widths_k)``.

    ``masses`` are the integrals of the density over each piece, so the CDF
    is piecewise linear and inverts in closed form.
    """
    masses = np.asarray(masses, dtype=float)
    k, rest = _pick(masses, u)
    frac = min(max(rest / masses[k], 0.0), 1.0)
    return float(starts[k] + frac * widths[k])


def equidistant_positions(cfg: RoadConfig, n: int, offset: float = 0.0) -> np.ndarray:
    """``n`` vehicles spaced evenly starting at ``a + offset``."""
    return cfg.a + offset + np.arange(n) * (cfg.length / n)


def quantile_positions(rho0: Callable[[np.ndarray], np.ndarray], cfg: RoadConfig, n: int, samples: int = 64) -> tuple[np.ndarray, float]:
    """Place ``n`` vehicles so each headway carries the same mass of ``rho0``.

    Returns the positions and the implied vehicle length ``L = (int rho0) / n``.
    """
    x = np.linspace(cfg.a, cfg.b, n * samples + 1)
    mid = 0.5 * (x[1:] + x[:-1])
    cum = np.concatenate([[0.0], np.cumsum(np.asarray(rho0(mid), dtype=float) * np.diff(x))])
    mass = cum[-1]
    if not mass > 0:
        raise ValueError("initial density carries no mass")
    targets = np.arange(n) * (mass / n)
    pos = np.interp(targets, cum, x)
    return pos, mass / n


def as_density(rho0) -> Callable[[np.ndarray], np.ndarray]:
    if callable(rho0):
        return rho0
    value = float(rho0)
    return lambda x: np.full(np.shape(x), value)


def integrate_density(rho0, cfg: RoadConfig, n: int = 200_000) -> float:
    """Mass of ``rho0`` on the road; exact for constant and step densities, midpoint rule otherwise."""
    if not callable(rho0):
        return float(rho0) * cfg.length
    if isinstance(rho0, PiecewiseDensity):
        # constant between consecutive breakpoints, so one midpoint per piece is exact
        cuts = [cfg.a, cfg.b] + [min(max(e, cfg.a), cfg.b) for lo, hi, _ in rho0.segments for e in (lo, hi)]
        edges = np.unique(cuts)
        return float(math.fsum(rho0(0.5 * (edges[1:] + edges[:-1])) * np.diff(edges)))
    f = rho0
    x = cfg.a + (np.arange(n) + 0.5) * (cfg.length / n)
    return float(math.fsum(np.asarray(f(x), dtype=float)) * cfg.length / n)


@dataclass(frozen=True)
class PiecewiseDensity:
    """Step density: ``default`` except ``value`` on each ``[lo, hi)`` segment."""

    default: float
    segments: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(tuple(map(float, s)) for s in self.segments))
        values = [self.default] + [v for _, _, v in self.segments]
        if min(values) < 0 or max(values) > 1:
            raise ValueError("densities must lie in [0, 1]")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, float(self.default))
        for lo, hi, value in self.segments:
            out[(x >= lo) & (x < hi)] = value
        return out


def piecewise_density(default: float, segments: Sequence[Sequence[float]] = ()) -> PiecewiseDensity:
    return PiecewiseDensity(float(default), tuple(tuple(s) for s in segments))


def initial_positions(rho0, cfg: RoadConfig, n: int) -> np.ndarray:
    """Equidistant vehicles for a constant density, equal-mass headways otherwise."""
    if not callable(rho0) or (isinstance(rho0, PiecewiseDensity) and not rho0.segments):
        return equidistant_positions(cfg, n)
    return quantile_positions(rho0, cfg, n)[0]
