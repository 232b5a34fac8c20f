"""Receding-horizon charging allocation and real-time storage balancing.

The allocation stage re-plans the per-vehicle charging powers and the
expected storage power each step against the committed dispatch schedule,
using deterministic forecasts only; unavoidable balance gaps are absorbed by
a penalized imbalance slack. The balancing stage then tracks the resulting
reference with the storage system against the realized inflexible power,
clipping to what the device can physically do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import cvxpy as cp
import numpy as np

from .core import (
    PowerFlow,
    StorageDevice,
    feasible_power_range,
    net,
    split,
    step_soc,
)
from .scheduler import CostModel, _solve_qp

#: Weight on the terminal charging shortfall; dominates the imbalance weight
#: so a feasible charging request is never traded against tracking.
TERMINAL_WEIGHT = 1e6

#: Headroom added to the departure-SOC constraint so solver round-off cannot
#: undershoot the declared requirement.
TERMINAL_MARGIN = 1e-4

#: L1 penalty on the two storage flow components; discourages fictitious
#: simultaneous charge/discharge without distorting the tracking objective.
SPLIT_PENALTY = 1.0

_REG = 1e-6


@dataclass(frozen=True)
class PevState:
    """One vehicle as seen by the allocation stage.

    ``soc`` is the measured SOC for connected vehicles and the expected
    plug-in SOC for vehicles arriving later in the horizon.
    """

    device: StorageDevice
    soc: float
    arrived: bool


@dataclass(frozen=True)
class AllocationProblem:
    """Inputs of one receding-horizon solve over ``[start, start + len)``."""

    start: int
    dis_net: np.ndarray
    forecast_net: np.ndarray
    ess: StorageDevice | None
    ess_soc: float
    pevs: tuple[PevState, ...]
    costs: CostModel
    step_hours: float = 1.0

    def __post_init__(self) -> None:
        if len(self.dis_net) != len(self.forecast_net) or len(self.dis_net) == 0:
            raise ValueError("dis_net and forecast_net must be equal-length and non-empty")

    @property
    def horizon(self) -> int:
        return len(self.dis_net)


@dataclass(frozen=True)
class AllocationResult:
    """Committed plan: per-step slack, expected storage power, vehicle powers."""

    start: int
    sigma: tuple[PowerFlow, ...]
    ess_power: tuple[PowerFlow, ...]
    pev_power: Mapping[str, tuple[PowerFlow, ...]]
    ess_soc: np.ndarray
    pev_soc: Mapping[str, np.ndarray]
    objective: float
    shortfalls: Mapping[str, float]

    def committed(self, k: int) -> tuple[PowerFlow, PowerFlow, dict[str, PowerFlow]]:
        """(sigma, expected ESS power, vehicle powers) committed for step ``k``."""
        i = k - self.start
        if not 0 <= i < len(self.sigma):
            raise KeyError(f"step {k} outside allocation horizon")
        return self.sigma[i], self.ess_power[i], {v: p[i] for v, p in self.pev_power.items()}


def allocate(prob: AllocationProblem) -> AllocationResult:
    """Solve the receding-horizon allocation QP.

    Minimizes the imbalance penalty plus the quadratic overcharge penalty of
    vehicles departing within the horizon, subject to device dynamics, limit
    constraints, and the departure-SOC requirement (softened by a heavily
    penalized shortfall so drifted states still yield a plan).
    """
    H = prob.horizon
    delta = prob.step_hours
    steps = np.arange(prob.start, prob.start + H)
    cm = prob.costs

    sp = cp.Variable(H, nonneg=True)
    sm = cp.Variable(H, nonpos=True)
    lower = np.tril(np.ones((H, H)))

    cons = []
    balance_rhs = prob.forecast_net + 0.0
    cost = cm.imbalance_weight * cp.sum(sp - sm)
    total_power = 0

    if prob.ess is not None:
        p0p = cp.Variable(H, nonneg=True)
        p0m = cp.Variable(H, nonpos=True)
        mu0 = prob.ess.efficiency
        e0 = prob.ess_soc + delta * (lower @ (mu0.charge * p0p + mu0.discharge * p0m))
        cons += [
            p0p + p0m <= prob.ess.p_max,
            p0p + p0m >= prob.ess.p_min,
            p0p <= max(prob.ess.p_max, 0.0),
            p0m >= min(prob.ess.p_min, 0.0),
            e0 <= prob.ess.e_max,
            e0 >= prob.ess.e_min,
        ]
        cost += SPLIT_PENALTY * cp.sum(p0p - p0m)
        cost += _REG * (cp.sum_squares(p0p) + cp.sum_squares(p0m))
        total_power = total_power + p0p + p0m

    pev_vars: dict[str, tuple] = {}
    shortfall_vars: dict[str, cp.Variable] = {}
    for st in prob.pevs:
        d = st.device
        mask = np.array([1.0 if d.connected_at(int(k)) else 0.0 for k in steps])
        if not mask.any() and not (prob.start < d.departure <= prob.start + H):
            continue
        pvp = cp.Variable(H, nonneg=True)
        pvm = cp.Variable(H, nonpos=True)
        mu = d.efficiency
        e_v = st.soc + delta * (lower @ (mu.charge * pvp + mu.discharge * pvm))
        cons += [
            pvp <= max(d.p_max, 0.0) * mask,
            pvm >= min(d.p_min, 0.0) * mask,
            pvp + pvm <= d.p_max * mask,
            pvp + pvm >= d.p_min * mask,
            e_v <= d.e_max,
            e_v >= d.e_min,
        ]
        cost += _REG * (cp.sum_squares(pvp) + cp.sum_squares(pvm))
        if d.p_min < 0.0:
            cost += SPLIT_PENALTY * cp.sum(pvp - pvm)
        if prob.start < d.departure <= prob.start + H:
            i_dep = d.departure - prob.start - 1
            s_v = cp.Variable(nonneg=True)
            shortfall_vars[d.name] = s_v
            target = min(d.required_soc + TERMINAL_MARGIN, d.e_max)
            cons.append(e_v[i_dep] >= target - s_v)
            cost += TERMINAL_WEIGHT * s_v
            w = cm.overcharge_for(d.name)
            if w > 0.0:
                cost += w * cp.square(e_v[i_dep] - d.required_soc)
        pev_vars[d.name] = (pvp, pvm, e_v)
        total_power = total_power + pvp + pvm

    cons.append(prob.dis_net + sp + sm == balance_rhs + total_power)

    qp = cp.Problem(cp.Minimize(cost), cons)
    status = _solve_qp(qp)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise RuntimeError(f"allocation solve failed with status {status}")

    def flows(vp, vm) -> tuple[PowerFlow, ...]:
        a = np.clip(np.asarray(vp.value, dtype=float), 0.0, None)
        b = np.clip(np.asarray(vm.value, dtype=float), None, 0.0)
        return tuple(PowerFlow(a[i], b[i]) for i in range(H))

    sigma = flows(sp, sm)
    if prob.ess is not None:
        ess_flows = flows(p0p, p0m)
        mu0 = prob.ess.efficiency
        soc = prob.ess_soc + delta * np.cumsum(
            [mu0.charge * f.fwd + mu0.discharge * f.rev for f in ess_flows])
    else:
        ess_flows = tuple(PowerFlow(0.0, 0.0) for _ in range(H))
        soc = np.full(H, prob.ess_soc)

    pev_power: dict[str, tuple[PowerFlow, ...]] = {}
    pev_soc: dict[str, np.ndarray] = {}
    state_by_name = {st.device.name: st for st in prob.pevs}
    for name, (pvp, pvm, _) in pev_vars.items():
        f = flows(pvp, pvm)
        pev_power[name] = f
        mu = state_by_name[name].device.efficiency
        pev_soc[name] = state_by_name[name].soc + delta * np.cumsum(
            [mu.charge * x.fwd + mu.discharge * x.rev for x in f])

    shortfalls = {name: float(v.value) for name, v in shortfall_vars.items()
                  if v.value is not None and float(v.value) > 1e-6}
    return AllocationResult(
        start=prob.start,
        sigma=sigma,
        ess_power=ess_flows,
        pev_power=pev_power,
        ess_soc=soc,
        pev_soc=pev_soc,
        objective=float(qp.value),
        shortfalls=shortfalls,
    )


def reference_power(g_s: PowerFlow, sigma: PowerFlow) -> float:
    """Grid-tracking reference: scheduled net exchange plus committed slack."""
    return net(g_s) + net(sigma)


@dataclass(frozen=True)
class BalancingOutcome:
    """Realized quantities of one balancing step."""

    ess_power: PowerFlow
    grid: PowerFlow
    residual: float


def balance_realtime(p_ref: float, l_realized: float,
                     pev_powers: Mapping[str, PowerFlow],
                     ess_device: StorageDevice | None, ess_soc: float,
                     step_hours: float = 1.0) -> BalancingOutcome:
    """Track the reference with the storage against the realized prosumption.

    The desired storage power closes the balance exactly; the realized one is
    clipped to the power limits and to the SOC-feasible range over the step.
    Whatever cannot be absorbed shows up as the residual imbalance (an
    output, never an error).
    """
    committed = sum(net(p) for p in pev_powers.values())
    desired = p_ref - l_realized - committed
    if ess_device is None:
        p0 = 0.0
    else:
        lo, hi = feasible_power_range(ess_device, ess_soc, step_hours)
        p0 = min(max(desired, lo), hi)
    g_net = l_realized + committed + p0
    return BalancingOutcome(ess_power=split(p0), grid=split(g_net),
                            residual=p_ref - g_net)


def clamp_to_device(device: StorageDevice, soc: float, p: PowerFlow,
                    step_hours: float) -> PowerFlow:
    """Clip a committed power to what the device state physically admits."""
    lo, hi = feasible_power_range(device, soc, step_hours)
    return split(min(max(net(p), lo), hi))
