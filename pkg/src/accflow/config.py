"""YAML run configuration with validation.

Every key is optional; missing values fall back to the reference setup
(road ``[-10, 10)`` with factor 7 and 5 on ``[0, 5)``, ``rho0 = 0.4``,
``dx = 1/160``, ``T = 10``). ``validate`` collects every problem it finds,
each tagged with the dotted path of the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from accflow.core import (
    REFERENCE_ROAD,
    PiecewiseDensity,
    RoadConfig,
    distribution_from_spec,
    distribution_to_spec,
    integrate_density,
)
from accflow.events import AccidentParams
from accflow.macro import SolverKind, cell_count
from accflow.micro import cfl_dt
from accflow.montecarlo import RunConfig


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists ``(key path, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("\n".join(f"{path}: {msg}" for path, msg in problems))


DEFAULTS: dict[str, Any] = {
    "road": {
        "a": REFERENCE_ROAD.a,
        "b": REFERENCE_ROAD.b,
        "base_factor": REFERENCE_ROAD.base_factor,
        "segments": [list(s) for s in REFERENCE_ROAD.segments],
        "smoothing_width": REFERENCE_ROAD.smoothing_width,
    },
    "initial_density": {"value": 0.4, "segments": []},
    "vehicles": {"N": 1600, "N_list": [50, 100, 200, 400, 800, 1600, 3200], "length": "auto"},
    "grid": {"dx": 1 / 160, "dt": "auto"},
    "T": 10.0,
    "accidents": {
        "lambda_F": 1 / 160,
        "lambda_D": 1 / 50,
        "lambda_R": 0.25,
        "beta": 0.5,
        "beta_macro": None,
        "size_dist": {"uniform": [0.2, 1.0]},
        "cap_dist": {"discrete": {"values": [0.5, 0.99], "weights": [0.5, 0.5]}},
        "c_max": 0.99,
        "K_cap": 64,
        "type1_mode": "continuous",
        "smooth_measure": False,
    },
    "macro": {"solver": "godunov"},
    "montecarlo": {"runs": 100, "dx_list": [1 / 40, 1 / 80, 1 / 160], "series_every": None, "include_endpoint": True, "rate_N": 3200},
    "bounds_check": {"N_list": [100, 400, 1600], "kappa": 0.05, "eps_tilde_ratio": 0.5, "dt_factor": 1.0},
    "seed": 0,
    "record_every": 160,
    "output": "out",
}


# values replaced as a whole rather than merged key by key
OPAQUE = {"accidents.size_dist", "accidents.cap_dist"}


def _merge(base: dict, over: dict, path: str, problems: list) -> dict:
    out = dict(base)
    for key, value in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            problems.append((where, "unknown key"))
        elif isinstance(base[key], dict) and base[key] and isinstance(value, dict) and where not in OPAQUE:
            out[key] = _merge(base[key], value, where, problems)
        else:
            out[key] = value
    return out


@dataclass
class Config:
    """A validated configuration, together with its merged raw mapping."""

    raw: dict
    road: RoadConfig
    rho0: PiecewiseDensity
    params: AccidentParams
    solver: SolverKind
    dx: float
    dt: float
    T: float
    N: int
    N_list: tuple[int, ...]
    length: float | None  # None: mass / N
    seed: int
    runs: int
    dx_list: tuple[float, ...]
    series_every: int | None
    include_endpoint: bool
    record_every: int
    rate_N: int
    output: Path
    bounds: dict = field(default_factory=dict)

    @property
    def mass(self) -> float:
        return integrate_density(self.rho0, self.road)

    def vehicle_length(self, N: int) -> float:
        return self.mass / N if self.length is None else self.length

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    def run_config(self, dx: float | None = None) -> RunConfig:
        auto_dt = self.raw["grid"]["dt"] == "auto"
        return RunConfig(
            N_list=self.N_list,
            dx=self.dx if dx is None else dx,
            dt=None if auto_dt else self.dt,
            T=self.T,
            runs=self.runs,
            seed=self.seed,
            solver=self.solver,
            params=self.params,
            road=self.road,
            rho0=self.rho0,
            series_every=self.series_every,
            include_endpoint=self.include_endpoint,
        )


def _num(raw: dict, path: str, problems: list, cast=float):
    node = raw
    for part in path.split("."):
        node = node[part]
    try:
        return cast(node)
    except (TypeError, ValueError):
        problems.append((path, f"expected a {cast.__name__}, got {node!r}"))
        return None


def build(raw_in: dict | None) -> Config:
    """Merge ``raw_in`` over the defaults, convert and validate; raise ``ConfigError`` on any problem."""
    problems: list[tuple[str, str]] = []
    if raw_in is None:
        raw_in = {}
    if not isinstance(raw_in, dict):
        raise ConfigError([("", "top level must be a mapping")])
    raw = _merge(DEFAULTS, raw_in, "", problems)

    road = rho0 = params = solver = None
    r = raw["road"]
    try:
        road = RoadConfig(
            a=float(r["a"]), b=float(r["b"]), base_factor=float(r["base_factor"]),
            segments=tuple(tuple(s) for s in r["segments"]), smoothing_width=float(r["smoothing_width"]),
        )
    except (TypeError, ValueError) as exc:
        problems.append(("road", str(exc)))
    d = raw["initial_density"]
    try:
        rho0 = PiecewiseDensity(float(d["value"]), tuple(tuple(s) for s in d["segments"]))
    except (TypeError, ValueError) as exc:
        problems.append(("initial_density", str(exc)))
    acc = raw["accidents"]
    try:
        size_dist = distribution_from_spec(acc["size_dist"])
    except (TypeError, ValueError, KeyError) as exc:
        problems.append(("accidents.size_dist", str(exc)))
        size_dist = None
    try:
        cap_dist = distribution_from_spec(acc["cap_dist"])
    except (TypeError, ValueError, KeyError) as exc:
        problems.append(("accidents.cap_dist", str(exc)))
        cap_dist = None
    c_max = _num(raw, "accidents.c_max", problems)
    if c_max is not None and not 0 <= c_max < 1:
        problems.append(("accidents.c_max", f"must lie in [0, 1), got {c_max}"))
    if cap_dist is not None and c_max is not None:
        lo, hi = cap_dist.support
        if lo < 0 or hi > c_max or hi >= 1:
            problems.append(("accidents.cap_dist", f"reductions must lie in [0, c_max={c_max}], support is [{lo}, {hi}]"))
    if size_dist is not None and size_dist.support[0] <= 0:
        problems.append(("accidents.size_dist", "accident sizes must be positive"))
    if not problems:
        try:
            params = AccidentParams(
                lambda_F=float(acc["lambda_F"]), lambda_D=float(acc["lambda_D"]), lambda_R=float(acc["lambda_R"]),
                beta=float(acc["beta"]), beta_macro=None if acc["beta_macro"] is None else float(acc["beta_macro"]),
                size_dist=size_dist, cap_dist=cap_dist, c_max=c_max, K_cap=int(acc["K_cap"]),
                type1_mode=str(acc["type1_mode"]), smooth_measure=bool(acc["smooth_measure"]),
            )
        except (TypeError, ValueError) as exc:
            problems.append(("accidents", str(exc)))
    try:
        solver = SolverKind.parse(raw["macro"]["solver"])
    except ValueError as exc:
        problems.append(("macro.solver", str(exc)))

    dx = _num(raw, "grid.dx", problems)
    T = _num(raw, "T", problems)
    N = _num(raw, "vehicles.N", problems, int)
    seed = _num(raw, "seed", problems, int)
    runs = _num(raw, "montecarlo.runs", problems, int)
    record_every = _num(raw, "record_every", problems, int)
    rate_N = _num(raw, "montecarlo.rate_N", problems, int)
    try:
        N_list = tuple(int(n) for n in raw["vehicles"]["N_list"])
    except (TypeError, ValueError):
        problems.append(("vehicles.N_list", "expected a list of integers"))
        N_list = ()
    try:
        dx_list = tuple(float(v) for v in raw["montecarlo"]["dx_list"])
    except (TypeError, ValueError):
        problems.append(("montecarlo.dx_list", "expected a list of numbers"))
        dx_list = ()
    length = None if raw["vehicles"]["length"] == "auto" else _num(raw, "vehicles.length", problems)
    dt = dx / 10 if raw["grid"]["dt"] == "auto" and dx is not None else _num(raw, "grid.dt", problems)
    series = raw["montecarlo"]["series_every"]
    if problems:
        raise ConfigError(problems)

    cfg = Config(
        raw=raw, road=road, rho0=rho0, params=params, solver=solver,
        dx=dx, dt=dt, T=T, N=N, N_list=N_list,
        length=length, seed=seed, runs=runs, dx_list=dx_list,
        series_every=None if series is None else int(series),
        include_endpoint=bool(raw["montecarlo"]["include_endpoint"]),
        record_every=record_every, rate_N=rate_N, output=Path(str(raw["output"])), bounds=dict(raw["bounds_check"]),
    )
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: Config) -> list[tuple[str, str]]:
    """Every statically checkable precondition of the configured runs."""
    problems = []
    for key, value in (("grid.dx", cfg.dx), ("grid.dt", cfg.dt), ("T", cfg.T)):
        if not value > 0:
            problems.append((key, f"must be positive, got {value}"))
    if problems:
        return problems
    for key, dx in [("grid.dx", cfg.dx)] + [(f"montecarlo.dx_list[{i}]", v) for i, v in enumerate(cfg.dx_list)]:
        try:
            cell_count(cfg.road, dx)
        except ValueError as exc:
            problems.append((key, str(exc)))
    n = cfg.T / cfg.dt
    if abs(n - round(n)) > 1e-9 * max(n, 1.0):
        problems.append(("T", f"horizon {cfg.T} is not a multiple of dt={cfg.dt}"))
    cfl = cfg.dt / cfg.dx * cfg.road.max_factor
    if cfl > 1 + 1e-12:
        problems.append(("grid.dt", f"macro CFL number dt/dx * max c = {cfl:.6g} exceeds 1"))
    if cfg.raw["grid"]["dt"] != "auto":
        for i, dx in enumerate(cfg.dx_list):
            if cfg.dt / dx * cfg.road.max_factor > 1 + 1e-12:
                problems.append((f"montecarlo.dx_list[{i}]", f"macro CFL violated with dt={cfg.dt}"))
    if cfg.length is not None:
        # an explicit length pins the micro step to the collision-free bound
        bound = cfl_dt(cfg.length, cfg.road.max_factor)
        if cfg.dt > bound * (1 + 1e-12):
            problems.append(("grid.dt", f"dt={cfg.dt!r} exceeds the collision-free bound L/v_max={bound!r}"))
        mass = cfg.N * cfg.length
        if not math.isclose(mass, cfg.mass, rel_tol=1e-9):
            problems.append(("vehicles.length", f"N*L = {mass:.6g} differs from the initial mass {cfg.mass:.6g}"))
    for key, counts in (("vehicles.N", (cfg.N,)), ("vehicles.N_list", cfg.N_list)):
        for N in counts:
            if N < 1:
                problems.append((key, f"vehicle count must be positive, got {N}"))
                continue
            # sweeps always use L = mass / N
            L = cfg.vehicle_length(N) if key == "vehicles.N" else cfg.mass / N
            if L * N > cfg.road.length * (1 + 1e-12):
                problems.append((key, f"{N} vehicles of length {L:.6g} do not fit on the road"))
    if cfg.runs < 1:
        problems.append(("montecarlo.runs", "must be >= 1"))
    if cfg.record_every < 1:
        problems.append(("record_every", "must be >= 1"))
    if cfg.series_every is not None and cfg.series_every < 1:
        problems.append(("montecarlo.series_every", "must be >= 1"))
    if cfg.rate_N < 1:
        problems.append(("montecarlo.rate_N", "must be >= 1"))
    b = cfg.bounds
    for key in ("kappa", "eps_tilde_ratio"):
        if not 0 < float(b[key]) < 1:
            problems.append((f"bounds_check.{key}", "must lie in (0, 1)"))
    if not float(b["dt_factor"]) > 0:
        problems.append(("bounds_check.dt_factor", "must be positive"))
    return problems


def load(path: str | Path) -> Config:
    """Read and validate a YAML file; syntax errors become ``ConfigError`` too."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError([("", f"cannot read {path}: {exc}")]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([("", f"invalid YAML: {exc}")]) from exc
    return build(raw)


def dump_defaults() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=False)


def params_to_raw(p: AccidentParams) -> dict:
    return {
        "lambda_F": p.lambda_F, "lambda_D": p.lambda_D, "lambda_R": p.lambda_R, "beta": p.beta,
        "beta_macro": p.beta_macro, "size_dist": distribution_to_spec(p.size_dist),
        "cap_dist": distribution_to_spec(p.cap_dist), "c_max": p.c_max, "K_cap": p.K_cap,
        "type1_mode": p.type1_mode, "smooth_measure": p.smooth_measure,
    }
