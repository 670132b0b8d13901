"""Command line interface: ``accflow {validate,simulate,converge,bounds-check}``.

Exit codes: 0 success, 1 configuration error, 2 invariant violation at run
time (including a failed bound check). ``ACCFLOW_WORKERS`` sets the worker
count of ``converge`` when ``--workers`` is not given.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from accflow import io
from accflow.config import Config, ConfigError, build, load
from accflow.core import CFLError, InvariantViolation, initial_positions
from accflow.coupled import MicroDensityField, replay_micro
from accflow.events import draw_stream
from accflow.lagrangian import harness_run
from accflow.macro import MacroState, init_cells
from accflow.macro import simulate as simulate_macro
from accflow.micro import MicroState, initial_state
from accflow.micro import simulate as simulate_micro
from accflow.montecarlo import ErrorReport, eval_grid, monte_carlo, rate_table

log = logging.getLogger("accflow")

MODELS = ("micro", "macro", "coupled")


def _load(args) -> Config:
    cfg = load(args.config) if args.config else build({})
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "solver", None) is not None:
        overrides.setdefault("macro", {})["solver"] = args.solver
    if overrides:
        raw = dict(cfg.raw)
        for key, value in overrides.items():
            raw[key] = {**raw[key], **value} if isinstance(value, dict) else value
        cfg = build(raw)
    return cfg


def _out_dir(args, cfg: Config) -> Path:
    out = Path(args.out) if args.out else cfg.output
    out.mkdir(parents=True, exist_ok=True)
    return out


def _draws(cfg: Config) -> np.ndarray:
    # run index 0 of the Monte Carlo streams, so a single realization matches converge
    return draw_stream(np.random.SeedSequence([cfg.seed, 0]), cfg.n_steps)


def _micro_start(cfg: Config) -> MicroState:
    N = cfg.N
    return initial_state(cfg.road, N, cfg.vehicle_length(N), initial_positions(cfg.rho0, cfg.road, N), K_cap=cfg.params.K_cap)


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok: {cfg.n_steps} steps of dt={cfg.dt:.6g}, {len(cfg.N_list)} vehicle counts, solver {cfg.solver.value}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    draws = _draws(cfg)
    every = cfg.record_every
    model = args.model
    if model == "micro":
        run = simulate_micro(_micro_start(cfg), cfg.params, cfg.dt, draws, record_every=every, check=True)
        io.write_csv(out / "trajectory.csv", "trajectory", io.trajectory_rows(run.times, run.snapshots))
        io.write_accident_log(out / "accidents.csv", run.log)
        log.info("micro: %d vehicles, %d accident events", cfg.N, len(run.log))
        return 0

    mac0 = init_cells(cfg.rho0, cfg.road, cfg.dx)
    mac = simulate_macro(mac0, cfg.params, cfg.dt, draws, cfg.solver, record_every=every)
    io.write_csv(out / "density.csv", "density", io.density_rows(mac.times, mac0.cell_centers, mac.snapshots))
    io.write_accident_log(out / "accidents.csv", mac.log)
    if model == "coupled":
        st = _micro_start(cfg)
        times, snaps = [st.t], [(st.ids.copy(), st.x.copy())]

        def keep(n: int, s: MicroState) -> None:
            s.check_invariants()
            if n % every == 0:
                times.append(s.t)
                snaps.append((s.ids.copy(), s.x.copy()))

        replay_micro(st, cfg.dt, len(draws), mac.acc_changes, on_step=keep)
        io.write_csv(out / "trajectory.csv", "trajectory", io.trajectory_rows(times, snaps))
        grid = eval_grid(cfg.road, cfg.dx, cfg.include_endpoint)

        def joint():
            for t, (_, x), rho in zip(times, snaps, mac.snapshots):
                micro = MicroDensityField(np.sort(x), st.L, cfg.road)(grid)
                macro = MacroState(rho, cfg.dx, cfg.road).density_at(grid)
                yield from zip([t] * len(grid), grid, micro, macro)

        io.write_csv(out / "joint.csv", "joint", joint())
    log.info("%s: %d accident events, %d cells clamped", model, len(mac.log), mac.state.clamped)
    return 0


def _report_rows(rep: ErrorReport):
    for r in rep.rows():
        yield tuple(r[name] for name, _ in io.SCHEMAS["report"])


def _select(rep: ErrorReport, N: int) -> ErrorReport:
    j = rep.N_list.index(N)
    return ErrorReport((N,), rep.dx, rep.samples_micro[:, [j]], rep.samples_coupled[:, [j]], rep.times)


def cmd_converge(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rc = cfg.run_config()
    rep = monte_carlo(rc, args.workers)
    io.write_csv(out / "report.csv", "report", _report_rows(rep))
    if cfg.series_every is not None:
        for N in rep.N_list:
            s = rep.series(N)
            with np.errstate(divide="ignore"):
                logs = [np.log(s[k]) for k in ("err1", "err2", "err3", "err4")]
            io.write_csv(out / f"series_N{N}.csv", "series", zip(s["t"], *logs))

    N = cfg.rate_N
    sweep = []
    for dx in cfg.dx_list:
        if math.isclose(dx, cfg.dx, rel_tol=1e-12) and N in rep.N_list:
            sweep.append(_select(rep, N))
        else:
            sweep.append(monte_carlo(replace(cfg.run_config(dx), N_list=(N,), series_every=None), args.workers))
    io.write_csv(out / "dx_report.csv", "report", (row for r in sweep for row in _report_rows(r)))
    rates = rate_table(sweep, N)
    io.write_csv(out / "rates.csv", "rates", ((r["dx"], r["metric"], r["rate"]) for r in rates))
    for r in rep.rows():
        log.info("N=%d err1=%.4g err2=%.4g err3=%.4g err4=%.4g", r["N"], r["err1"], r["err2"], r["err3"], r["err4"])
    return 0


def cmd_bounds_check(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    b = cfg.bounds
    factor = float(b["dt_factor"])
    reports = []
    for N in b["N_list"]:
        N = int(N)
        L = cfg.mass / N
        kw = dict(kappa=float(b["kappa"]), eps_tilde_ratio=float(b["eps_tilde_ratio"]))
        res = harness_run(cfg.road, N, L, initial_positions(cfg.rho0, cfg.road, N), **kw)
        if factor != 1.0:
            # deliberately off-bound step over the same horizon
            res = harness_run(
                cfg.road, N, L, initial_positions(cfg.rho0, cfg.road, N),
                T=res.trajectory[-1].t, dt=res.dt * factor, enforce=False, **kw,
            )
        rep = res.report
        io.write_json(out / f"bounds_N{N}.json", rep.__dict__)
        reports.append(rep)
        log.info("N=%d T=%.6g min_w=%.6g max_w=%.6g violations=%d", N, rep.T, rep.min_w, rep.max_w, len(rep.violations))
    io.write_json(out / "bounds.json", [r.__dict__ for r in reports])
    bad = [r.N for r in reports if not r.ok]
    if bad:
        print(f"bound violations for N = {bad}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="accflow", description="Stochastic traffic accident simulations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration (defaults to the reference setup)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--solver", choices=("godunov", "lxf"), help="override the macro solver")
        sp.add_argument("--out", help="output directory (overrides 'output')")

    common(sub.add_parser("validate", help="check a configuration"))
    sp = sub.add_parser("simulate", help="one seeded realization")
    common(sp)
    sp.add_argument("--model", choices=MODELS, default="coupled")
    sp = sub.add_parser("converge", help="Monte Carlo error study")
    common(sp)
    sp.add_argument("--workers", type=int, help="worker processes (default: $ACCFLOW_WORKERS or 1)")
    common(sub.add_parser("bounds-check", help="Lagrangian bound harness"))
    return p


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "converge": cmd_converge, "bounds-check": cmd_bounds_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error: {path or '<file>'}: {msg}", file=sys.stderr)
        return 1
    except (InvariantViolation, CFLError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
