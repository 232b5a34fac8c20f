"""Synthetic PV traces, calibrated probabilistic forecasts and arrival SOCs.

The generator is a clear-sky curve modulated by a stochastic attenuation with
day-to-day correlation (an AR(1) daily cloud state plus an AR(1) hourly
residual). Day-ahead forecasts are built from an ensemble simulated from the
true process conditioned on the state at issue time, so they are calibrated
by construction; the accumulated-energy error distributions come from the
ensemble partial sums and therefore carry the temporal correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import (
    ArrivalSocDistribution,
    EmpiricalDistribution,
    ForecastBundle,
    QuantileForecast,
    distribution_from_quantiles,
    robust_bounds,
)

_QUANTILE_LEVELS = np.array(
    [0.005, 0.01, 0.025, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5,
     0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 0.99, 0.995])


@dataclass(frozen=True)
class PvParams:
    """Clear-sky and attenuation parameters of the synthetic plant."""

    kwp: float = 10.0
    cloud_mean: float = 0.65
    cloud_phi: float = 0.55
    cloud_sigma: float = 0.18
    hourly_phi: float = 0.75
    hourly_sigma: float = 0.10
    att_floor: float = 0.05
    att_ceil: float = 1.0
    season_cycle: tuple[float, ...] = (1.0, 0.45, 0.8, 0.35, 0.9, 0.6)

    def season(self, day: int) -> float:
        return self.season_cycle[(day // 7) % len(self.season_cycle)]

    def clear_sky(self, day: int, hour: int) -> float:
        amp = self.season(day)
        daylight = 8.0 + 6.0 * amp
        rise = 12.0 - 0.5 * daylight
        x = (hour + 0.5 - rise) / daylight
        if not 0.0 < x < 1.0:
            return 0.0
        return self.kwp * amp * math.sin(math.pi * x) ** 1.3

    @property
    def deterministic(self) -> bool:
        return self.cloud_sigma == 0.0 and self.hourly_sigma == 0.0


class SyntheticPv:
    """Realized trace plus forecast machinery for one simulation run.

    The realized inflexible power is load-positive, so a producing plant
    yields negative values. One extra day beyond ``n_days`` is simulated to
    cover the horizon extension of the last scheduled day.
    """

    #: One pre-history day so that forecasts issued before the first
    #: simulated midnight condition on a well-defined state.
    PRE_DAYS = 1

    def __init__(self, params: PvParams, n_days: int, seed: int,
                 ensemble_size: int = 240, coverage: float = 0.998,
                 grid_step: float = 0.1):
        self.params = params
        self.n_days = n_days
        self.coverage = coverage
        self.grid_step = grid_step
        self.ensemble_size = ensemble_size
        self._off = 24 * self.PRE_DAYS
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
        total_days = n_days + 2 + self.PRE_DAYS
        p = params
        self._cloud = np.empty(total_days)
        c = p.cloud_mean
        for d in range(total_days):
            c = p.cloud_mean + p.cloud_phi * (c - p.cloud_mean) \
                + p.cloud_sigma * rng.standard_normal()
            self._cloud[d] = c
        n_hours = 24 * total_days
        self._resid = np.empty(n_hours)
        r = 0.0
        for t in range(n_hours):
            r = p.hourly_phi * r + p.hourly_sigma * rng.standard_normal()
            self._resid[t] = r
        day_of = np.arange(n_hours) // 24 - self.PRE_DAYS
        self._clear = np.array([p.clear_sky(int(day_of[t]), t % 24) for t in range(n_hours)])
        att = np.clip(self._cloud[np.arange(n_hours) // 24] + self._resid,
                      p.att_floor, p.att_ceil)
        self._trace = -self._clear * att
        self._seed = seed

    # -- realized quantities ----------------------------------------------

    def realized(self, t: int) -> float:
        return float(self._trace[t + self._off])

    def trace(self) -> np.ndarray:
        return self._trace[self._off:].copy()

    # -- intraday deterministic forecast -----------------------------------

    def deterministic_forecast(self, t_now: int, steps: Sequence[int]) -> np.ndarray:
        """Conditional-mean forecast of the net load given the state at ``t_now``.

        Propagates the AR means from the current cloud state and hourly
        residual; the attenuation clip is applied to the mean.
        """
        p = self.params
        now = t_now + self._off
        day_now = now // 24
        out = np.empty(len(steps))
        for i, t in enumerate(steps):
            tt = t + self._off
            d = tt // 24
            c = self._cloud[min(day_now, len(self._cloud) - 1)]
            for _ in range(d - day_now):
                c = p.cloud_mean + p.cloud_phi * (c - p.cloud_mean)
            r = self._resid[min(now, len(self._resid) - 1)] * p.hourly_phi ** max(tt - now, 0)
            att = min(max(c + r, p.att_floor), p.att_ceil)
            out[i] = -self._clear[tt] * att
        return out

    # -- day-ahead probabilistic forecast -----------------------------------

    def day_ahead_bundle(self, issue_t: int, start: int, n_steps: int,
                         step_hours: float = 1.0) -> ForecastBundle:
        """Ensemble-based probabilistic forecast for ``[start, start+n_steps)``."""
        p = self.params
        rng = np.random.default_rng(
            np.random.SeedSequence((self._seed, 0xF0CA, issue_t + self._off)))
        m = 1 if p.deterministic else self.ensemble_size
        issue = issue_t + self._off
        first = start + self._off
        last = first + n_steps
        day0 = issue // 24
        cloud_at = {day0: np.full(m, self._cloud[day0])}
        c = cloud_at[day0]
        for d in range(day0 + 1, (last - 1) // 24 + 1):
            c = p.cloud_mean + p.cloud_phi * (c - p.cloud_mean) \
                + p.cloud_sigma * rng.standard_normal(m)
            cloud_at[d] = c
        resid_at: dict[int, np.ndarray] = {issue: np.full(m, self._resid[issue])}
        r = resid_at[issue]
        for t in range(issue + 1, last):
            r = p.hourly_phi * r + p.hourly_sigma * rng.standard_normal(m)
            if t >= first:
                resid_at[t] = r
        members = np.empty((m, n_steps))
        for i, tt in enumerate(range(first, last)):
            att = np.clip(cloud_at[tt // 24] + resid_at[tt], p.att_floor, p.att_ceil)
            members[:, i] = -self._clear[tt] * att
        return bundle_from_ensemble(start, members, step_hours,
                                    coverage=self.coverage, grid_step=self.grid_step)


def bundle_from_ensemble(start: int, members: np.ndarray, step_hours: float = 1.0,
                         coverage: float = 0.998, grid_step: float = 0.1,
                         issued: int = 0) -> ForecastBundle:
    """Summarize forecast ensemble members into a :class:`ForecastBundle`."""
    m, n = members.shape
    expected: dict[int, float] = {}
    lower: dict[int, float] = {}
    upper: dict[int, float] = {}
    energy_error: dict[int, EmpiricalDistribution] = {}
    power_error: dict[int, EmpiricalDistribution] = {}
    mean = members.mean(axis=0)
    partial = np.zeros(m)
    for i in range(n):
        k = start + i
        expected[k] = float(mean[i])
        if m == 1:
            lower[k] = upper[k] = float(mean[i])
            power_error[k] = EmpiricalDistribution.point_mass(0.0)
        else:
            qv = np.quantile(members[:, i], _QUANTILE_LEVELS)
            qf = QuantileForecast(k, issued, tuple(_QUANTILE_LEVELS), tuple(np.maximum.accumulate(qv)))
            lo, hi = robust_bounds(qf, coverage)
            lower[k] = min(lo, expected[k])
            upper[k] = max(hi, expected[k])
            power_error[k] = EmpiricalDistribution.from_samples(
                members[:, i] - mean[i], step=grid_step)
        if i == 0:
            energy_error[k] = EmpiricalDistribution.point_mass(0.0)
        elif m == 1:
            energy_error[k] = EmpiricalDistribution.point_mass(0.0)
        else:
            energy_error[k] = EmpiricalDistribution.from_samples(partial, step=grid_step)
        partial += (members[:, i] - mean[i]) * step_hours
    return ForecastBundle(start=start, expected=expected, lower=lower, upper=upper,
                          energy_error=energy_error, power_error=power_error)


def arrival_soc_histogram(e_min: float, e_max: float, required_soc: float,
                          autonomy_km: float = 280.0, mean_trip_km: float = 33.0,
                          bin_kwh: float = 2.0, samples: int = 20000,
                          seed: int = 7, deterministic: bool = False,
                          ) -> ArrivalSocDistribution:
    """Plug-in SOC histogram derived from trip-distance sampling.

    Vehicles leave charged to ``required_soc`` and consume proportionally to
    the driven distance given the full-charge autonomy; distances follow a
    Rayleigh law truncated so the SOC stays above the device floor.
    """
    if deterministic:
        soc = required_soc - mean_trip_km * e_max / autonomy_km
        soc = min(max(soc, e_min), e_max)
        point = EmpiricalDistribution.point_mass(round(soc / bin_kwh) * bin_kwh)
        return ArrivalSocDistribution(point, e_min, e_max)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x50C)))
    scale = mean_trip_km / math.sqrt(math.pi / 2.0)
    d_max = (required_soc - e_min) * autonomy_km / e_max
    trips = rng.rayleigh(scale, samples)
    trips = np.minimum(trips, d_max)
    soc = required_soc - trips * e_max / autonomy_km
    binned = np.round(soc / bin_kwh) * bin_kwh
    binned = np.clip(binned, e_min, e_max)
    dist = EmpiricalDistribution.from_samples(binned, step=bin_kwh)
    return ArrivalSocDistribution(dist, e_min, e_max)
