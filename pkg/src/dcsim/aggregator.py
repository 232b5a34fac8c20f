"""Dynamic aggregation of the ESS and connected PEVs into one battery model.

Arrivals and departures are handled asymmetrically: an arrival raises both
capacity limits and injects the vehicle's stored energy, while a departure
only raises the lower energy limit (the departing SOC is indistinguishable
inside the aggregate, so its energy is never subtracted). The departure bump
swaps the vehicle's own floor for its required departure SOC, which makes the
aggregate limits a true relaxation of every per-device feasible dispatch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    DeviceKind,
    EfficiencyVector,
    PowerFlow,
    StorageDevice,
    TimeGrid,
)


class IllPosedScenarioError(ValueError):
    """Aggregate limits cross; scenario data is inconsistent."""

    def __init__(self, step: int, e_lo: float, e_hi: float):
        super().__init__(f"aggregate energy limits cross at step {step}: "
                         f"lower {e_lo} > upper {e_hi}")
        self.step = step


@dataclass(frozen=True)
class FleetCalendar:
    """Connection bookkeeping of the PEVs intersecting one scheduling window."""

    start: int
    end: int
    pevs: tuple[StorageDevice, ...]

    def __post_init__(self) -> None:
        for d in self.pevs:
            if d.kind is not DeviceKind.PEV:
                raise ValueError(f"{d.name} is not a PEV")
        ordered = tuple(sorted(self.pevs, key=lambda d: (d.arrival, d.name)))
        object.__setattr__(self, "pevs", ordered)

    def connected(self, k: int) -> tuple[StorageDevice, ...]:
        return tuple(d for d in self.pevs if d.connected_at(k))

    def arrivals_at(self, k: int) -> tuple[StorageDevice, ...]:
        return tuple(d for d in self.pevs if d.arrival == k)

    def departures_at(self, k: int) -> tuple[StorageDevice, ...]:
        return tuple(d for d in self.pevs if d.departure == k)

    def arrived_until(self, k: int) -> tuple[StorageDevice, ...]:
        """Ordered cumulative arrival set within the window."""
        return tuple(d for d in self.pevs if self.start <= d.arrival <= k)

    def departed_until(self, k: int) -> tuple[StorageDevice, ...]:
        return tuple(d for d in self.pevs if self.start <= d.departure <= k)

    def last_departure(self) -> int | None:
        deps = [d.departure for d in self.pevs if self.start <= d.departure < self.end]
        return max(deps) if deps else None


def aggregate_power_limits(k: int, cal: FleetCalendar,
                           ess_device: StorageDevice | None) -> tuple[float, float]:
    """Componentwise sums of the power limits of all devices connected at ``k``."""
    p_lo = ess_device.p_min if ess_device else 0.0
    p_hi = ess_device.p_max if ess_device else 0.0
    for d in cal.connected(k):
        p_lo += d.p_min
        p_hi += d.p_max
    return p_lo, p_hi


def aggregate_energy_limits(cal: FleetCalendar,
                            ess_device: StorageDevice | None) -> tuple[np.ndarray, np.ndarray]:
    """Per-step aggregate energy limits over ``[cal.start, cal.end)``.

    Seeded from the ESS limits plus the contribution of vehicles already
    arrived or departed before the window. Each arrival adds the vehicle's
    capacity band; each departure replaces the vehicle's floor with its
    required departure SOC in the lower limit.
    """
    n = cal.end - cal.start
    e_lo = np.empty(n)
    e_hi = np.empty(n)
    lo = ess_device.e_min if ess_device else 0.0
    hi = ess_device.e_max if ess_device else 0.0
    for d in cal.pevs:
        if d.arrival < cal.start:
            lo += d.e_min
            hi += d.e_max
        if d.departure < cal.start:
            lo += d.required_soc - d.e_min
    for i, k in enumerate(range(cal.start, cal.end)):
        for d in cal.arrivals_at(k):
            lo += d.e_min
            hi += d.e_max
        for d in cal.departures_at(k):
            lo += d.required_soc - d.e_min
        if lo > hi + 1e-9:
            raise IllPosedScenarioError(k, lo, hi)
        e_lo[i] = lo
        e_hi[i] = hi
    return e_lo, e_hi


def step_aggregate_soc(e: float, p: PowerFlow, arrival_socs: Iterable[float],
                       mu: EfficiencyVector, delta: float) -> float:
    """Aggregate SOC update: arrival energy jumps plus the efficiency-weighted flow."""
    return e + sum(arrival_socs) + (mu.charge * p.fwd + mu.discharge * p.rev) * delta


@dataclass(frozen=True)
class TimeVaryingBattery:
    """Aggregate storage model over one scheduling window.

    Arrays are indexed by window-relative step. ``expected_jumps[i]`` is the
    expected arrival-SOC energy injected when entering step ``start + i``
    (zero at the window start, which is covered by ``initial_soc``).
    """

    start: int
    p_lo: np.ndarray
    p_hi: np.ndarray
    e_lo: np.ndarray
    e_hi: np.ndarray
    expected_jumps: np.ndarray
    mu: EfficiencyVector
    initial_soc: float

    def __post_init__(self) -> None:
        n = len(self.p_lo)
        for name in ("p_hi", "e_lo", "e_hi", "expected_jumps"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        cross = np.nonzero(self.e_lo > self.e_hi + 1e-9)[0]
        if cross.size:
            i = int(cross[0])
            raise IllPosedScenarioError(self.start + i, float(self.e_lo[i]), float(self.e_hi[i]))

    @property
    def n(self) -> int:
        return len(self.p_lo)


def build_battery(grid: TimeGrid, cal: FleetCalendar,
                  ess_device: StorageDevice | None,
                  expected_arrival_soc: Mapping[str, float],
                  initial_soc: float) -> TimeVaryingBattery:
    """Assemble the aggregate model for one scheduling window.

    ``expected_arrival_soc`` maps vehicle names to the mean plug-in SOC used
    for the expected-trajectory jump terms. All devices must share one loss
    coefficient; a mixed fleet would need an averaging rule the aggregate
    dynamics do not define.
    """
    losses = {d.loss_coeff for d in cal.pevs}
    if ess_device is not None:
        losses.add(ess_device.loss_coeff)
    if len(losses) > 1:
        raise ValueError(f"devices disagree on loss coefficient: {sorted(losses)}")
    mu = EfficiencyVector.from_loss(losses.pop() if losses else 0.0)

    n = grid.horizon_steps
    if (cal.start, cal.end) != (grid.start, grid.end):
        raise ValueError("calendar window does not match the time grid")
    p_lo = np.empty(n)
    p_hi = np.empty(n)
    for i, k in enumerate(grid.steps()):
        p_lo[i], p_hi[i] = aggregate_power_limits(k, cal, ess_device)
    e_lo, e_hi = aggregate_energy_limits(cal, ess_device)
    jumps = np.zeros(n)
    for i, k in enumerate(grid.steps()):
        if i == 0:
            continue  # vehicles present at the start are part of initial_soc
        for d in cal.arrivals_at(k):
            jumps[i] += expected_arrival_soc[d.name]
    return TimeVaryingBattery(grid.start, p_lo, p_hi, e_lo, e_hi, jumps, mu, initial_soc)
