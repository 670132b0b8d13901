"""Monte Carlo comparison of vehicle densities with the LWR solution.

One realization draws a single stream of per-step uniforms and feeds it to
the macroscopic run, to the stand-alone microscopic run for every ``N`` and
(implicitly, through the macro accident history) to the coupled run. The
errors are L1 distances of the density fields sampled on the macro grid.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from accflow.core import REFERENCE_ROAD, CFLError, RoadConfig, as_density, initial_positions, integrate_density
from accflow.coupled import MicroDensityField, replay_micro
from accflow.events import AccidentParams, draw_stream
from accflow.macro import MacroState, SolverKind, cell_count, init_cells
from accflow.macro import simulate as simulate_macro
from accflow.micro import MicroState, initial_state, substeps
from accflow.micro import simulate as simulate_micro

log = logging.getLogger(__name__)

WORKERS_ENV = "ACCFLOW_WORKERS"


@dataclass(frozen=True)
class RunConfig:
    """Settings of a Monte Carlo error study.

    ``dt`` defaults to ``dx / 10``. The vehicle length is ``L(N) = m / N``
    with ``m`` the mass of ``rho0`` so that every ``N`` carries the same mass.
    ``series_every`` additionally records the errors every that many steps.
    """

    N_list: tuple[int, ...] = (50, 100, 200, 400, 800, 1600, 3200)
    dx: float = 1 / 160
    dt: float | None = None
    T: float = 10.0
    runs: int = 100
    seed: int = 0
    solver: SolverKind = SolverKind.GODUNOV
    params: AccidentParams = field(default_factory=AccidentParams)
    road: RoadConfig = REFERENCE_ROAD
    rho0: float | Callable[[np.ndarray], np.ndarray] = 0.4
    models: tuple[str, ...] = ("micro", "coupled")
    series_every: int | None = None
    include_endpoint: bool = True

    def __post_init__(self):
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        object.__setattr__(self, "solver", SolverKind.parse(self.solver))
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.N_list or min(self.N_list) < 1:
            raise ValueError("N_list needs positive vehicle counts")
        if not set(self.models) <= {"micro", "coupled"} or not self.models:
            raise ValueError("models must be a non-empty subset of {'micro', 'coupled'}")

    @property
    def time_step(self) -> float:
        return self.dx / 10 if self.dt is None else self.dt

    @property
    def n_steps(self) -> int:
        n = round(self.T / self.time_step)
        if abs(n * self.time_step - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.time_step}")
        return n

    @property
    def mass(self) -> float:
        return integrate_density(as_density(self.rho0), self.road)

    def vehicle_length(self, N: int) -> float:
        return self.mass / N

    def check(self) -> list[str]:
        """Violated preconditions, as readable messages (empty when fine)."""
        problems = []
        try:
            cell_count(self.road, self.dx)
        except ValueError as exc:
            problems.append(str(exc))
        try:
            self.n_steps
        except ValueError as exc:
            problems.append(str(exc))
        # capacity never exceeds the largest road factor
        cfl = self.time_step / self.dx * self.road.max_factor
        if cfl > 1 + 1e-12:
            problems.append(f"macro CFL number dt/dx * max c = {cfl:.4g} > 1")
        for n in self.N_list:
            L = self.vehicle_length(n)
            if n * L > self.road.length:
                problems.append(f"N={n} vehicles of length {L} do not fit on the road")
        return problems

    def substeps(self, N: int) -> int:
        """Collision-free Euler substeps per shared step for ``N`` vehicles."""
        return substeps(self.time_step, self.vehicle_length(N), self.road.max_factor)


def eval_grid(road: RoadConfig, dx: float, include_endpoint: bool = True) -> np.ndarray:
    """``a + i dx`` for ``i = 0..K`` (``K = (b-a)/dx``), without ``b`` if not ``include_endpoint``."""
    k = cell_count(road, dx)
    return road.a + np.arange(k + 1 if include_endpoint else k) * dx


def l1_error_snapshot(rho_micro, rho_macro, dx: float, road: RoadConfig, include_endpoint: bool = True) -> float:
    """Rectangle rule ``dx * sum_i |rho_micro(a + i dx) - rho_macro(a + i dx)|``.

    Both fields are callables; ``cell_count`` rejects a ``dx`` that does not
    tile the road.
    """
    grid = eval_grid(road, dx, include_endpoint)
    return float(dx * np.abs(np.asarray(rho_micro(grid)) - np.asarray(rho_macro(grid))).sum())


@dataclass
class RealizationResult:
    """L1 errors at ``T`` per ``N``; ``series_*`` rows are record times."""

    micro: np.ndarray
    coupled: np.ndarray
    times: np.ndarray
    series_micro: np.ndarray | None = None
    series_coupled: np.ndarray | None = None
    n_events: int = 0


def _macro_start(cfg: RunConfig) -> MacroState:
    return init_cells(cfg.rho0, cfg.road, cfg.dx)


def _micro_start(cfg: RunConfig, N: int) -> MicroState:
    L = cfg.vehicle_length(N)
    return initial_state(cfg.road, N, L, initial_positions(cfg.rho0, cfg.road, N), K_cap=cfg.params.K_cap)


def run_realization(cfg: RunConfig, run_index: int) -> RealizationResult:
    """One common-random-number realization across all ``N`` and both model pairs."""
    n_steps = cfg.n_steps
    draws = draw_stream(np.random.SeedSequence([cfg.seed, run_index]), n_steps)
    every = cfg.series_every or n_steps
    mac = simulate_macro(_macro_start(cfg), cfg.params, cfg.time_step, draws, cfg.solver, record_every=every)
    dx, road, ends = cfg.dx, cfg.road, cfg.include_endpoint
    grid = eval_grid(road, dx, ends)
    macro_vals = [MacroState(rho, dx, road).density_at(grid) for rho in mac.snapshots]
    times = np.asarray(mac.times)

    def err(x: np.ndarray, L: float, k: int) -> float:
        return float(dx * np.abs(MicroDensityField(x, L, road)(grid) - macro_vals[k]).sum())

    nN, nt = len(cfg.N_list), len(times)
    out = {m: np.full((nN, nt), np.nan) for m in ("micro", "coupled")}
    for j, N in enumerate(cfg.N_list):
        st = _micro_start(cfg, N)
        if "micro" in cfg.models:
            run = simulate_micro(st, cfg.params, cfg.time_step, draws, record_every=every)
            for k, (_, x) in enumerate(run.snapshots):
                out["micro"][j, k] = err(x, st.L, k)
        if "coupled" in cfg.models:
            out["coupled"][j, 0] = err(st.x, st.L, 0)

            def keep(n: int, s: MicroState, j=j) -> None:
                if n % every == 0:
                    out["coupled"][j, n // every] = err(s.x, s.L, n // every)

            replay_micro(st, cfg.time_step, n_steps, mac.acc_changes, on_step=keep)
    series = cfg.series_every is not None
    return RealizationResult(
        micro=out["micro"][:, -1].copy(),
        coupled=out["coupled"][:, -1].copy(),
        times=times,
        series_micro=out["micro"] if series else None,
        series_coupled=out["coupled"] if series else None,
        n_events=len(mac.log),
    )


def run_coupled_realization(cfg: RunConfig, seed: int, N: int) -> tuple[float, float]:
    """``(micro-vs-macro, coupled-vs-macro)`` L1 errors at ``T`` for one seed and one ``N``."""
    one = replace(cfg, N_list=(N,), runs=1, seed=seed, models=("micro", "coupled"), series_every=None)
    res = run_realization(one, 0)
    return float(res.micro[0]), float(res.coupled[0])


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(mean.shape, np.nan)
    return mean, se


def _rms_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Root mean square with a delta-method standard error."""
    m2, se_m2 = _mean_se(x**2)
    rms = np.sqrt(m2)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(rms > 0, se_m2 / (2 * rms), 0.0 if x.shape[0] > 1 else np.nan)
    return rms, se


@dataclass
class ErrorReport:
    """Err1..Err4 per ``N`` with standard errors and the raw per-run samples.

    Err1/Err3 compare the stand-alone vehicles with the macro density,
    Err2/Err4 the coupled vehicles; Err1/Err2 are means and Err3/Err4 root
    mean squares of the per-run L1 errors.
    """

    N_list: tuple[int, ...]
    dx: float
    samples_micro: np.ndarray  # (runs, len(N_list))
    samples_coupled: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    series_micro: np.ndarray | None = None  # (runs, len(N_list), len(times))
    series_coupled: np.ndarray | None = None

    @property
    def runs(self) -> int:
        return self.samples_micro.shape[0]

    def errors(self) -> dict[str, np.ndarray]:
        e1, s1 = _mean_se(self.samples_micro)
        e2, s2 = _mean_se(self.samples_coupled)
        e3, s3 = _rms_se(self.samples_micro)
        e4, s4 = _rms_se(self.samples_coupled)
        return {"err1": e1, "err2": e2, "err3": e3, "err4": e4, "se1": s1, "se2": s2, "se3": s3, "se4": s4}

    def rows(self) -> list[dict]:
        e = self.errors()
        return [{"N": n, "dx": self.dx, **{k: float(v[j]) for k, v in e.items()}} for j, n in enumerate(self.N_list)]

    def series(self, N: int) -> dict[str, np.ndarray]:
        """Err1..Err4 over the record times for one ``N``."""
        if self.series_micro is None:
            raise ValueError("report has no time series; set series_every")
        j = self.N_list.index(N)
        mic, cpl = self.series_micro[:, j, :], self.series_coupled[:, j, :]
        return {
            "t": self.times,
            "err1": mic.mean(axis=0),
            "err2": cpl.mean(axis=0),
            "err3": np.sqrt((mic**2).mean(axis=0)),
            "err4": np.sqrt((cpl**2).mean(axis=0)),
        }


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def _task(args: tuple[RunConfig, int]) -> RealizationResult:
    return run_realization(*args)


def monte_carlo(cfg: RunConfig, workers: int | None = None) -> ErrorReport:
    """Run ``cfg.runs`` independent realizations and aggregate them.

    Run ``r`` uses the stream seeded by ``(cfg.seed, r)``, so the report does
    not depend on the number of workers or on scheduling.
    """
    problems = cfg.check()
    if problems:
        raise CFLError("; ".join(problems))
    tasks = [(cfg, r) for r in range(cfg.runs)]
    n = worker_count(workers)
    if n == 1:
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_task, tasks))
    series = cfg.series_every is not None
    return ErrorReport(
        N_list=cfg.N_list,
        dx=cfg.dx,
        samples_micro=np.stack([r.micro for r in results]),
        samples_coupled=np.stack([r.coupled for r in results]),
        times=results[0].times,
        series_micro=np.stack([r.series_micro for r in results]) if series else None,
        series_coupled=np.stack([r.series_coupled for r in results]) if series else None,
    )


def empirical_rate(err_coarse: float, err_fine: float) -> float:
    """``log(Err(2 dx) / Err(dx)) / log 2``."""
    if not (err_coarse > 0 and err_fine > 0):
        raise ValueError("rates need positive errors")
    return math.log(err_coarse / err_fine) / math.log(2.0)


def empirical_rates(dx_list: Sequence[float], errors: Sequence[float]) -> list[tuple[float, float]]:
    """``(dx, rate)`` for every ``dx`` whose doubled step is also in ``dx_list``."""
    by_dx = dict(zip(dx_list, errors))
    out = []
    for dx in sorted(by_dx, reverse=True):
        coarse = next((d for d in by_dx if math.isclose(d, 2 * dx, rel_tol=1e-9)), None)
        if coarse is not None:
            out.append((dx, empirical_rate(by_dx[coarse], by_dx[dx])))
    return out


def dx_sweep(cfg: RunConfig, dx_list: Sequence[float], workers: int | None = None) -> list[ErrorReport]:
    """One report per macro cell width, each with ``dt = dx / 10`` unless ``cfg.dt`` is set."""
    reports = []
    for dx in dx_list:
        reports.append(monte_carlo(replace(cfg, dx=dx), workers))
    return reports


def rate_table(reports: Sequence[ErrorReport], N: int) -> list[dict]:
    """Rows ``{dx, metric, rate}`` for Err1..Err4 at vehicle count ``N``."""
    rows = []
    for metric in ("err1", "err2", "err3", "err4"):
        dxs = [r.dx for r in reports]
        vals = [float(r.errors()[metric][r.N_list.index(N)]) for r in reports]
        for dx, rate in empirical_rates(dxs, vals):
            rows.append({"dx": dx, "metric": metric, "rate": rate})
    return rows
