"""Command line interface: schedule, simulate, report, validate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio, report
from .core import PowerFlow
from .harness import audit_day, build_day_inputs, run_days
from .scheduler import InfeasibleScheduleError, ScheduleSolveError, solve_dispatch


def _parse_eps(text: str) -> list[float]:
    levels = [float(x) for x in text.split(",") if x.strip()]
    for lv in levels:
        if not 0.0 < lv < 1.0:
            raise argparse.ArgumentTypeError(f"reliability level {lv} outside (0, 1)")
    return levels


def _load_scenario(args) -> "Scenario":
    sc = fileio.load_scenario(args.scenario)
    if args.seed is not None:
        sc.seed = int(args.seed)
        sc._pv = None
    if args.gamma is not None:
        sc.gamma = args.gamma
    return sc


def cmd_schedule(args) -> int:
    sc = _load_scenario(args)
    eps = args.epsilon[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    initial = sc.initial_ess_soc if sc.ess is not None else 0.0
    inputs = build_day_inputs(sc, args.day, initial, PowerFlow(0.0, 0.0), eps)
    try:
        sched = solve_dispatch(inputs.problem, sc.costs)
    except (InfeasibleScheduleError, ScheduleSolveError) as exc:
        print(f"schedule failed: {exc}", file=sys.stderr)
        return 1
    path = out / f"dispatch_day{args.day}_eps{eps:g}.csv"
    fileio.write_dispatch(path, sched)
    print(f"day {args.day} level {eps:g}: objective {sched.objective:.4f} EUR, "
          f"slack {sched.total_slack():.3g}, "
          f"{sched.iterations} iterations in {sched.solve_seconds:.2f}s -> {path}")
    return 0


def cmd_simulate(args) -> int:
    sc = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    days = args.days if args.days is not None else sc.n_days
    slots = [spec.slot for spec in sc.fleet]
    reports = []
    for eps in args.epsilon:
        result = run_days(sc, eps, days)
        reports.append(result.metrics)
        tag = f"eps{eps:g}"
        fileio.write_operations(out / f"operations_{tag}.csv", result.records, slots)
        fileio.write_series_long(out / f"series_{tag}.csv", result.records)
        for day, sched in sorted(result.schedules.items()):
            if sched is not None:
                fileio.write_dispatch(out / f"dispatch_{tag}_day{day}.csv", sched)
        m = result.metrics
        print(f"level {eps:g}: mean tracking {m.mean_r_gamma:.3f}, "
              f"balancing {m.mean_balancing_kwh:.2f} kWh/day, "
              f"schedule cost {m.mean_dis_cost:.2f} EUR/day, "
              f"total {m.mean_total_cost:.2f} EUR/day")
    fileio.write_metrics(out / "metrics.csv", reports)
    print(f"wrote metrics for {len(reports)} level(s) -> {out / 'metrics.csv'}")
    return 0


def cmd_report(args) -> int:
    produced = report.render_report(args.out)
    for p in produced:
        print(f"wrote {p}")
    return 0


def cmd_validate(args) -> int:
    sc = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    days = args.days if args.days is not None else sc.n_days
    failures = 0
    rows = []
    for eps in args.epsilon:
        result = run_days(sc, eps, days)
        for day, sched in sorted(result.schedules.items()):
            if sched is None:
                continue
            audit = audit_day(result, day, draws=args.draws)
            enforced = audit.stage1_slack <= 1e-9
            ok = (not enforced) or audit.min_energy_prob >= eps - 0.02
            failures += 0 if ok else 1
            rows.append((eps, day, enforced, audit.min_energy_prob,
                         audit.min_power_prob, ok))
            print(f"level {eps:g} day {day}: min P[energy in limits] "
                  f"{audit.min_energy_prob:.3f}, min P[power in limits] "
                  f"{audit.min_power_prob:.3f} "
                  f"({'enforced' if enforced else 'softened'}) "
                  f"{'ok' if ok else 'FAIL'}")
    import csv
    with open(out / "audit.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon_level", "day", "enforced", "min_energy_prob",
                    "min_power_prob", "ok"])
        for r in rows:
            w.writerow([r[0], r[1], int(r[2]), repr(r[3]), repr(r[4]), int(r[5])])
    print(f"audit written -> {out / 'audit.csv'}")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dcsim",
        description="Three-stage scheduling and operation of a dispatchable "
                    "charging station")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, eps_default="0.75"):
        sp.add_argument("--scenario", required=True, help="scenario INI file")
        sp.add_argument("--epsilon", type=_parse_eps, default=_parse_eps(eps_default),
                        help="comma-separated reliability levels")
        sp.add_argument("--seed", type=int, default=None, help="override scenario seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--gamma", type=float, default=None,
                        help="tracking tolerance (kW)")

    sp = sub.add_parser("schedule", help="one day-ahead solve")
    common(sp)
    sp.add_argument("--day", type=int, default=0, help="scheduling day index")
    sp.set_defaults(func=cmd_schedule)

    sp = sub.add_parser("simulate", help="closed-loop simulation")
    common(sp, eps_default="0.55,0.65,0.75,0.85")
    sp.add_argument("--days", type=int, default=None, help="override day count")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="summary tables and figures from outputs")
    sp.add_argument("--out", default="out", help="directory holding simulate outputs")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("validate", help="Monte Carlo chance-constraint audit")
    common(sp)
    sp.add_argument("--days", type=int, default=None, help="override day count")
    sp.add_argument("--draws", type=int, default=1000, help="Monte Carlo draws")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
