"""Delimited text formats: schedules, operation logs, forecasts, scenarios.

Every output is comma-separated with a one-line header. Floats are written
with ``repr`` so a re-load reproduces the values bit-exactly.
"""

from __future__ import annotations

import configparser
import csv
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import PowerFlow, net
from .distributions import ArrivalSocDistribution, EmpiricalDistribution, QuantileForecast
from .harness import (
    DayMetrics,
    FleetVehicleSpec,
    MetricsReport,
    OperationRecord,
    Scenario,
)
from .scheduler import CostModel, DispatchSchedule
from .synthetic import PvParams, arrival_soc_histogram


def _f(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# Dispatch schedule
# --------------------------------------------------------------------------

DISPATCH_HEADER = ["step", "committed", "net_kw", "import_kw", "export_kw",
                   "p_hat_import_kw", "p_hat_export_kw", "expected_soc_kwh", "slack"]


def write_dispatch(path: str | Path, sched: DispatchSchedule) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DISPATCH_HEADER)
        for i in range(sched.n):
            k = sched.start + i
            g = sched.grid_exchange[i]
            p = sched.expected_power[i]
            w.writerow([k, int(i < sched.day_steps), _f(net(g)), _f(g.fwd), _f(g.rev),
                        _f(p.fwd), _f(p.rev), _f(sched.expected_soc[i]),
                        _f(sched.slack[i])])


def read_dispatch(path: str | Path) -> DispatchSchedule:
    """Re-load an emitted schedule; diagnostics fields are not round-tripped."""
    rows = list(csv.reader(open(path, newline="")))
    if rows[0] != DISPATCH_HEADER:
        raise ValueError(f"unexpected dispatch header in {path}")
    steps, committed, g_list, p_list, soc, slack = [], [], [], [], [], []
    for row in rows[1:]:
        steps.append(int(row[0]))
        committed.append(int(row[1]))
        g_list.append(PowerFlow(float(row[3]), float(row[4])))
        p_list.append(PowerFlow(float(row[5]), float(row[6])))
        soc.append(float(row[7]))
        slack.append(float(row[8]))
    return DispatchSchedule(
        start=steps[0], day_steps=sum(committed),
        grid_exchange=tuple(g_list), expected_power=tuple(p_list),
        expected_soc=np.array(soc), slack=np.array(slack),
        objective=math.nan, iterations=0, solve_seconds=math.nan,
        max_violation=math.nan, converged=True)


# --------------------------------------------------------------------------
# Operation log (wide) and plot-ready long format
# --------------------------------------------------------------------------


def operations_header(slots: Sequence[str]) -> list[str]:
    head = ["step", "p_ref_kw", "l_kw", "dis_net_kw", "sigma_kw", "ess_kw",
            "g_kw", "residual_kw", "baseline_kw", "ess_soc_kwh"]
    for s in slots:
        head += [f"pev_{s}_kw", f"pev_{s}_soc_kwh"]
    return head


def write_operations(path: str | Path, records: Iterable[OperationRecord],
                     slots: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(operations_header(slots))
        for r in records:
            row = [r.step, _f(r.p_ref), _f(r.l_realized), _f(r.dis_net),
                   _f(r.sigma_net), _f(r.ess_net), _f(r.g_net), _f(r.residual),
                   _f(r.baseline), _f(r.ess_soc)]
            for s in slots:
                row.append(_f(r.pev_net.get(s, 0.0)))
                row.append(_f(r.pev_soc[s]) if s in r.pev_soc else "")
            w.writerow(row)


def write_series_long(path: str | Path, records: Iterable[OperationRecord]) -> None:
    """Long-format series (step, series, value) for plotting tools."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "series", "value"])
        for r in records:
            for series, value in (
                    ("dis_net", r.dis_net), ("g_net", r.g_net),
                    ("l", r.l_realized), ("baseline", r.baseline),
                    ("ess", r.ess_net), ("ess_soc", r.ess_soc),
                    ("sigma", r.sigma_net), ("residual", r.residual)):
                w.writerow([r.step, series, _f(value)])
            for s, v in r.pev_soc.items():
                w.writerow([r.step, f"pev_{s}_soc", _f(v)])


METRICS_HEADER = ["epsilon_level", "day", "valid", "r_gamma", "balancing_kwh",
                  "dis_cost_eur", "sigma_cost_eur", "total_cost_eur",
                  "max_ramp_g_kw", "max_ramp_baseline_kw",
                  "min_terminal_margin_kwh", "stage1_slack", "stage1_seconds"]


def write_metrics(path: str | Path, reports: Iterable[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for rep in reports:
            for d in rep.days:
                margin = d.min_terminal_margin
                w.writerow([
                    _f(rep.one_minus_eps), d.day, int(d.valid), _f(d.r_gamma),
                    _f(d.balancing_kwh), _f(d.dis_cost), _f(d.sigma_cost),
                    _f(d.total_cost), _f(d.max_ramp_g), _f(d.max_ramp_baseline),
                    _f(margin) if math.isfinite(margin) else "",
                    _f(d.stage1_slack) if math.isfinite(d.stage1_slack) else "",
                    _f(d.stage1_seconds) if math.isfinite(d.stage1_seconds) else ""])


def read_metrics(path: str | Path) -> list[dict]:
    rows = list(csv.DictReader(open(path, newline="")))
    out = []
    for r in rows:
        out.append({k: (r[k] if k in ("day", "valid") else
                        (float(r[k]) if r[k] != "" else math.nan))
                    for k in r})
        out[-1]["day"] = int(r["day"])
        out[-1]["valid"] = bool(int(r["valid"]))
    return out


# --------------------------------------------------------------------------
# Forecast and histogram ingestion
# --------------------------------------------------------------------------


def write_quantile_forecasts(path: str | Path,
                             forecasts: Iterable[QuantileForecast]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["issue_time", "horizon_step", "tau", "value"])
        for qf in forecasts:
            for tau, val in zip(qf.levels, qf.values):
                w.writerow([qf.issued, qf.horizon, _f(tau), _f(val)])


def read_quantile_forecasts(path: str | Path) -> dict[tuple[int, int], QuantileForecast]:
    """One forecast per (issue_time, horizon_step) pair."""
    by_key: dict[tuple[int, int], list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = (int(row["issue_time"]), int(row["horizon_step"]))
            by_key.setdefault(key, []).append((float(row["tau"]), float(row["value"])))
    out = {}
    for (issued, horizon), pairs in by_key.items():
        pairs.sort()
        out[(issued, horizon)] = QuantileForecast(
            horizon, issued, tuple(p for p, _ in pairs), tuple(v for _, v in pairs))
    return out


def write_soc_histogram(path: str | Path, hist: ArrivalSocDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["soc_bin_kwh", "relative_frequency"])
        for x, p in zip(hist.dist.grid, hist.dist.pdf):
            if p > 0.0:
                w.writerow([_f(x), _f(p)])


def read_soc_histogram(path: str | Path, e_min: float, e_max: float) -> ArrivalSocDistribution:
    bins: list[tuple[float, float]] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            bins.append((float(row["soc_bin_kwh"]), float(row["relative_frequency"])))
    bins.sort()
    if len(bins) == 1:
        dist = EmpiricalDistribution.point_mass(bins[0][0])
        return ArrivalSocDistribution(dist, e_min, e_max)
    xs = np.array([b[0] for b in bins])
    ws = np.array([b[1] for b in bins])
    step = float(np.min(np.diff(xs)))
    lo, hi = float(xs[0]), float(xs[-1])
    n = int(round((hi - lo) / step)) + 1
    weights = np.zeros(n)
    idx = np.round((xs - lo) / step).astype(int)
    weights[idx] = ws
    dist = EmpiricalDistribution(lo, hi, weights / weights.sum())
    return ArrivalSocDistribution(dist, e_min, e_max)


# --------------------------------------------------------------------------
# Scenario files (INI sections)
# --------------------------------------------------------------------------


def write_scenario(path: str | Path, sc: Scenario) -> None:
    cp = configparser.ConfigParser()
    cp["station"] = {"name": sc.name, "seed": str(sc.seed), "days": str(sc.n_days)}
    cp["grid"] = {
        "step_hours": _f(sc.step_hours), "day_steps": str(sc.day_steps),
        "extension": str(sc.extension), "decision_lead": str(sc.decision_lead),
        "stage2_horizon": str(sc.stage2_horizon), "coverage": _f(sc.coverage),
        "gamma": _f(sc.gamma), "resolution_kwh": _f(sc.grid_step_kwh)}
    if sc.ess is not None:
        cp["ess"] = {
            "p_min": _f(sc.ess.p_min), "p_max": _f(sc.ess.p_max),
            "e_min": _f(sc.ess.e_min), "e_max": _f(sc.ess.e_max),
            "loss_coeff": _f(sc.ess.loss_coeff),
            "initial_soc": _f(sc.initial_ess_soc if sc.initial_ess_soc is not None
                              else 0.5 * sc.ess.e_max)}
    for spec in sc.fleet:
        cp[f"pev.{spec.slot}"] = {
            "arrival": str(spec.arrival_hour), "departure": str(spec.departure_hour),
            "p_min": _f(spec.p_min), "p_max": _f(spec.p_max),
            "e_min": _f(spec.e_min), "e_max": _f(spec.e_max),
            "loss_coeff": _f(spec.loss_coeff), "required_soc": _f(spec.required_soc)}
    costs = {
        "quad_import": _f(sc.costs.quad[0, 0]), "quad_export": _f(sc.costs.quad[1, 1]),
        "linear_import": _f(sc.costs.linear[0]), "linear_export": _f(sc.costs.linear[1]),
        "ramp_weight": _f(sc.costs.ramp_weight),
        "slack_weight": _f(sc.costs.slack_weight),
        "imbalance_weight": _f(sc.costs.imbalance_weight),
        "overcharge_weight": _f(sc.costs.overcharge_weight)}
    if sc.costs.overcharge_by_pev:
        for slot, wgt in sc.costs.overcharge_by_pev.items():
            costs[f"overcharge_{slot}"] = _f(wgt)
    cp["costs"] = costs
    p = sc.pv_params
    cp["pv"] = {
        "mode": "synthetic", "kwp": _f(p.kwp), "cloud_mean": _f(p.cloud_mean),
        "cloud_phi": _f(p.cloud_phi), "cloud_sigma": _f(p.cloud_sigma),
        "hourly_phi": _f(p.hourly_phi), "hourly_sigma": _f(p.hourly_sigma),
        "season_cycle": ",".join(_f(s) for s in p.season_cycle)}
    cp["arrival_soc"] = {"mode": "builtin"}
    with open(path, "w") as fh:
        cp.write(fh)


def load_scenario(path: str | Path) -> Scenario:
    from .core import ess as make_ess

    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    station = cp["station"]
    grid = cp["grid"]
    ess_dev = None
    initial_soc = None
    if cp.has_section("ess"):
        e = cp["ess"]
        initial_soc = e.getfloat("initial_soc", fallback=None)
        ess_dev = make_ess("ess", e.getfloat("p_min"), e.getfloat("p_max"),
                           e.getfloat("e_min"), e.getfloat("e_max"),
                           e.getfloat("loss_coeff"))
    fleet = []
    for section in cp.sections():
        if not section.startswith("pev."):
            continue
        s = cp[section]
        fleet.append(FleetVehicleSpec(
            slot=section[4:], arrival_hour=s.getint("arrival"),
            departure_hour=s.getint("departure"), p_min=s.getfloat("p_min"),
            p_max=s.getfloat("p_max"), e_min=s.getfloat("e_min"),
            e_max=s.getfloat("e_max"), loss_coeff=s.getfloat("loss_coeff"),
            required_soc=s.getfloat("required_soc")))
    fleet.sort(key=lambda f: (f.arrival_hour, f.slot))
    c = cp["costs"]
    overcharge_by = {}
    for key in c:
        if key.startswith("overcharge_") and key != "overcharge_weight":
            overcharge_by[key[len("overcharge_"):]] = c.getfloat(key)
    costs = CostModel(
        quad=np.array([[c.getfloat("quad_import"), 0.0],
                       [0.0, c.getfloat("quad_export")]]),
        linear=np.array([c.getfloat("linear_import"), c.getfloat("linear_export")]),
        ramp_weight=c.getfloat("ramp_weight"),
        slack_weight=c.getfloat("slack_weight", fallback=1e4),
        imbalance_weight=c.getfloat("imbalance_weight", fallback=1e3),
        overcharge_weight=c.getfloat("overcharge_weight", fallback=0.03),
        overcharge_by_pev=overcharge_by or None)
    pvs = cp["pv"]
    if pvs.get("mode", "synthetic") != "synthetic":
        raise ValueError("only synthetic pv scenarios are supported in INI form; "
                         "use the forecast-file ingestion API for measured data")
    season = tuple(float(x) for x in pvs.get("season_cycle", "1.0").split(","))
    pv_params = PvParams(
        kwp=pvs.getfloat("kwp", fallback=10.0),
        cloud_mean=pvs.getfloat("cloud_mean", fallback=0.65),
        cloud_phi=pvs.getfloat("cloud_phi", fallback=0.55),
        cloud_sigma=pvs.getfloat("cloud_sigma", fallback=0.18),
        hourly_phi=pvs.getfloat("hourly_phi", fallback=0.75),
        hourly_sigma=pvs.getfloat("hourly_sigma", fallback=0.10),
        season_cycle=season)
    if not fleet:
        raise ValueError("scenario has no pev.* sections")
    ref = fleet[0]
    if cp.has_section("arrival_soc") and cp["arrival_soc"].get("histogram_file"):
        hist = read_soc_histogram(cp["arrival_soc"]["histogram_file"],
                                  ref.e_min, ref.e_max)
    else:
        hist = arrival_soc_histogram(
            ref.e_min, ref.e_max, ref.required_soc,
            mean_trip_km=cp["arrival_soc"].getfloat("mean_trip_km", fallback=33.0)
            if cp.has_section("arrival_soc") else 33.0,
            seed=station.getint("seed", fallback=1),
            deterministic=pv_params.deterministic)
    return Scenario(
        name=station.get("name", "scenario"),
        ess=ess_dev, fleet=tuple(fleet), arrival_dist=hist, costs=costs,
        pv_params=pv_params,
        n_days=station.getint("days", fallback=7),
        seed=station.getint("seed", fallback=1),
        step_hours=grid.getfloat("step_hours", fallback=1.0),
        day_steps=grid.getint("day_steps", fallback=24),
        extension=grid.getint("extension", fallback=12),
        decision_lead=grid.getint("decision_lead", fallback=12),
        stage2_horizon=grid.getint("stage2_horizon", fallback=11),
        coverage=grid.getfloat("coverage", fallback=0.998),
        gamma=grid.getfloat("gamma", fallback=1e-4),
        grid_step_kwh=grid.getfloat("resolution_kwh", fallback=0.1),
        initial_ess_soc=initial_soc)
