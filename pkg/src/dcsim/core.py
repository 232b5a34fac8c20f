"""Power-flow primitives, storage device parameters and per-device SOC dynamics.

Powers are kW, energies kWh, step durations hours. Every power exchange is kept
as a two-component vector (one component per flow direction) because the SOC
dynamics and the grid tariffs are asymmetric in direction. The first component
is the flow drawn towards the device/grid node (charging / import), the second
the opposite direction (discharging / export).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

#: Feasibility tolerance for limit checks, in device units (kW / kWh).
TOL = 1e-9


class DeviceKind(Enum):
    ESS = "ess"
    PEV = "pev"


@dataclass(frozen=True)
class PowerFlow:
    """Directed power exchange: ``fwd`` >= 0 kW, ``rev`` <= 0 kW.

    The net (signed) power is ``fwd + rev``. Values within ``TOL`` of the
    admissible sign are snapped to zero so that solver round-off does not
    trip validation.
    """

    fwd: float
    rev: float

    def __post_init__(self) -> None:
        fwd, rev = float(self.fwd), float(self.rev)
        if -TOL <= fwd < 0.0:
            fwd = 0.0
        if 0.0 < rev <= TOL:
            rev = 0.0
        if fwd < 0.0 or rev > 0.0:
            raise ValueError(f"invalid power flow ({self.fwd}, {self.rev})")
        object.__setattr__(self, "fwd", fwd)
        object.__setattr__(self, "rev", rev)

    @property
    def net(self) -> float:
        return self.fwd + self.rev


ZERO_FLOW = PowerFlow(0.0, 0.0)


def net(p: PowerFlow) -> float:
    """Signed power of a directed flow (kW)."""
    return p.fwd + p.rev


def split(value: float) -> PowerFlow:
    """Canonical two-component representation of a signed power.

    At most one component is nonzero and ``net(split(x)) == x``.
    """
    return PowerFlow(max(value, 0.0), min(value, 0.0))


@dataclass(frozen=True)
class EfficiencyVector:
    """Direction-dependent conversion gains derived from a loss coefficient.

    ``charge = 1 - mu_n`` applies to the forward (charging) component,
    ``discharge = 1 + mu_n`` to the reverse one, so that a round trip of the
    same net energy strictly loses energy for ``mu_n > 0``.
    """

    charge: float
    discharge: float

    def __post_init__(self) -> None:
        if not (0.0 < self.charge <= 1.0 <= self.discharge):
            raise ValueError(f"invalid efficiency pair ({self.charge}, {self.discharge})")

    @classmethod
    def from_loss(cls, mu_n: float) -> "EfficiencyVector":
        if not 0.0 <= mu_n < 1.0:
            raise ValueError(f"loss coefficient {mu_n} outside [0, 1)")
        return cls(1.0 - mu_n, 1.0 + mu_n)


def step_soc(e: float, p: PowerFlow, mu: EfficiencyVector, delta: float) -> float:
    """One-step SOC update: ``e + charge*fwd*delta + discharge*rev*delta``."""
    return e + (mu.charge * p.fwd + mu.discharge * p.rev) * delta


@dataclass(frozen=True)
class StorageDevice:
    """Static parameters of one controllable storage device (ESS or PEV).

    For PEVs, ``arrival``/``departure`` are step indices with the connection
    convention ``arrival <= k < departure`` (the departure step itself offers
    no power), ``required_soc`` is the SOC that must be reached by departure
    and ``arrival_soc`` the realized plug-in SOC (known only in simulation).
    """

    name: str
    kind: DeviceKind
    p_min: float
    p_max: float
    e_min: float
    e_max: float
    loss_coeff: float
    soc: float = math.nan
    arrival: int | None = None
    departure: int | None = None
    required_soc: float | None = None
    arrival_soc: float | None = None

    def __post_init__(self) -> None:
        if self.p_min > self.p_max:
            raise ValueError(f"{self.name}: p_min {self.p_min} > p_max {self.p_max}")
        if self.e_min > self.e_max:
            raise ValueError(f"{self.name}: e_min {self.e_min} > e_max {self.e_max}")
        if not math.isnan(self.soc) and not (self.e_min - TOL <= self.soc <= self.e_max + TOL):
            raise ValueError(f"{self.name}: soc {self.soc} outside [{self.e_min}, {self.e_max}]")
        if self.kind is DeviceKind.PEV:
            if self.arrival is None or self.departure is None or self.required_soc is None:
                raise ValueError(f"{self.name}: PEV needs arrival, departure and required_soc")
            if self.arrival >= self.departure:
                raise ValueError(f"{self.name}: arrival {self.arrival} >= departure {self.departure}")
            if not (self.e_min - TOL <= self.required_soc <= self.e_max + TOL):
                raise ValueError(f"{self.name}: required_soc {self.required_soc} outside capacity")

    @property
    def efficiency(self) -> EfficiencyVector:
        return EfficiencyVector.from_loss(self.loss_coeff)

    @property
    def is_pev(self) -> bool:
        return self.kind is DeviceKind.PEV

    def connected_at(self, k: int) -> bool:
        if self.kind is DeviceKind.ESS:
            return True
        assert self.arrival is not None and self.departure is not None
        return self.arrival <= k < self.departure


def ess(name: str, p_min: float, p_max: float, e_min: float, e_max: float,
        loss_coeff: float, soc: float = math.nan) -> StorageDevice:
    return StorageDevice(name, DeviceKind.ESS, p_min, p_max, e_min, e_max, loss_coeff, soc)


def pev(name: str, p_min: float, p_max: float, e_min: float, e_max: float,
        loss_coeff: float, arrival: int, departure: int, required_soc: float,
        soc: float = math.nan, arrival_soc: float | None = None) -> StorageDevice:
    return StorageDevice(name, DeviceKind.PEV, p_min, p_max, e_min, e_max, loss_coeff,
                         soc, arrival, departure, required_soc, arrival_soc)


@dataclass(frozen=True)
class LimitReport:
    """Signed constraint violations of one device at one step.

    Positive values exceed the upper limit, negative ones undershoot the
    lower limit; zero means the inequality holds within ``TOL``.
    """

    power_violation: float
    energy_violation: float

    @property
    def ok(self) -> bool:
        return abs(self.power_violation) <= TOL and abs(self.energy_violation) <= TOL


def check_limits(device: StorageDevice, p: PowerFlow, e: float) -> LimitReport:
    """Check the power and capacity inequalities of one device."""
    pn = net(p)
    p_viol = 0.0
    if pn > device.p_max + TOL:
        p_viol = pn - device.p_max
    elif pn < device.p_min - TOL:
        p_viol = pn - device.p_min
    e_viol = 0.0
    if e > device.e_max + TOL:
        e_viol = e - device.e_max
    elif e < device.e_min - TOL:
        e_viol = e - device.e_min
    return LimitReport(p_viol, e_viol)


def feasible_power_range(device: StorageDevice, soc: float, delta: float) -> tuple[float, float]:
    """Net power interval that keeps the device inside both limit pairs.

    Inverts the SOC update over one step: the largest admissible charging
    power is ``(e_max - soc) / (charge * delta)`` and the deepest discharge
    ``(e_min - soc) / (discharge * delta)``, both intersected with the power
    limits.
    """
    mu = device.efficiency
    hi = min(device.p_max, (device.e_max - soc) / (mu.charge * delta))
    lo = max(device.p_min, (device.e_min - soc) / (mu.discharge * delta))
    if lo > hi:
        # state drifted outside the capacity band: hold the admissible power
        # closest to idle instead of returning an empty interval
        x = min(max(0.0, hi), lo)
        return x, x
    return lo, hi


@dataclass(frozen=True)
class TimeGrid:
    """Discrete scheduling clock.

    ``start`` is the first scheduled step, ``day_steps`` the committed window
    length, ``extension`` the extra lookahead appended to reduce end-of-horizon
    artifacts, and ``decision`` the step at which the schedule is computed
    (strictly before ``start``).
    """

    step_hours: float
    start: int
    day_steps: int
    extension: int
    decision: int

    def __post_init__(self) -> None:
        if self.step_hours <= 0.0:
            raise ValueError("step_hours must be positive")
        if self.decision >= self.start:
            raise ValueError(f"decision step {self.decision} not before start {self.start}")
        if self.day_steps < 1 or self.extension < 0:
            raise ValueError("need day_steps >= 1 and extension >= 0")

    @property
    def horizon_steps(self) -> int:
        return self.day_steps + self.extension

    @property
    def end(self) -> int:
        """First step beyond the extended horizon."""
        return self.start + self.horizon_steps

    def steps(self) -> range:
        return range(self.start, self.end)

    def day_range(self) -> range:
        return range(self.start, self.start + self.day_steps)
