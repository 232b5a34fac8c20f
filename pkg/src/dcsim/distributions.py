"""Empirical probability machinery for forecast errors and arrival SOCs.

Distributions are kept as probability masses on a uniform value grid with a
piecewise-linear CDF between grid points. Discrete convolution of two such
objects is exact when both live on lattices of the same resolution, which is
what the aggregate energy-deviation construction relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MASS_TOL = 1e-6

__all__ = [
    "EmpiricalDistribution",
    "QuantileForecast",
    "ArrivalSocDistribution",
    "ForecastBundle",
    "distribution_from_quantiles",
    "convolve",
    "energy_deviation_distribution",
    "robust_bounds",
]


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Probability masses on a uniform grid ``linspace(lo, hi, len(pdf))``."""

    lo: float
    hi: float
    pdf: np.ndarray
    cdf: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        pdf = np.asarray(self.pdf, dtype=float)
        if pdf.ndim != 1 or pdf.size == 0:
            raise ValueError("pdf must be a non-empty 1-d array")
        if np.any(pdf < -MASS_TOL):
            raise ValueError("pdf weights must be nonnegative")
        total = float(pdf.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"pdf mass {total} not 1 within {MASS_TOL}")
        pdf = np.clip(pdf, 0.0, None)
        pdf = pdf / max(pdf.sum(), np.finfo(float).tiny)
        if pdf.size == 1 and self.hi != self.lo:
            raise ValueError("single-point distribution needs lo == hi")
        if pdf.size > 1 and not self.hi > self.lo:
            raise ValueError("need hi > lo for multi-point grids")
        cdf = np.cumsum(pdf)
        cdf[-1] = 1.0
        pdf.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "pdf", pdf)
        object.__setattr__(self, "cdf", cdf)

    # -- basic geometry -------------------------------------------------

    @property
    def n(self) -> int:
        return int(self.pdf.size)

    @property
    def step(self) -> float:
        return 0.0 if self.n == 1 else (self.hi - self.lo) / (self.n - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def is_point_mass(self) -> bool:
        return self.n == 1

    # -- queries ---------------------------------------------------------

    def cdf_at(self, x):
        """Piecewise-linear CDF (step function for a point mass)."""
        x = np.asarray(x, dtype=float)
        if self.n == 1:
            out = np.where(x >= self.lo, 1.0, 0.0)
        else:
            out = np.interp(x, self.grid, self.cdf, left=0.0, right=1.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, p: float) -> float:
        """Smallest grid abscissa where the CDF reaches ``p`` (linear in between)."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level {p} outside [0, 1]")
        if self.n == 1:
            return self.lo
        g, c = self.grid, self.cdf
        i = int(np.searchsorted(c, p, side="left"))
        if i == 0:
            return float(g[0]) if p > 0.0 else float(self.lo)
        if i >= self.n:
            return float(self.hi)
        c0, c1 = c[i - 1], c[i]
        if c1 <= c0:
            return float(g[i])
        w = (p - c0) / (c1 - c0)
        return float(g[i - 1] + w * (g[i] - g[i - 1]))

    def mean(self) -> float:
        return float(np.dot(self.grid, self.pdf))

    def variance(self) -> float:
        g = self.grid
        m = self.mean()
        return float(np.dot((g - m) ** 2, self.pdf))

    def density_at(self, x: float, width: float | None = None) -> float:
        """Local density ``(F(x+h/2) - F(x-h/2)) / h`` with ``h`` one grid cell."""
        h = width if width is not None else (self.step if self.step > 0.0 else 0.0)
        if h <= 0.0:
            return 0.0
        return (self.cdf_at(x + 0.5 * h) - self.cdf_at(x - 0.5 * h)) / h

    def mirrored(self) -> "EmpiricalDistribution":
        """Distribution of the negated variable."""
        return EmpiricalDistribution(-self.hi, -self.lo, self.pdf[::-1].copy())

    def shifted(self, offset: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.lo + offset, self.hi + offset, self.pdf.copy())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.sample_from_uniforms(rng.random(n))

    def sample_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Discrete inverse-CDF transform of uniforms in [0, 1).

        Draws land exactly on the grid so sample means match the mass mean;
        interpolating the linearized CDF instead would shift every draw half
        a cell to the left on average.
        """
        u = np.asarray(u, dtype=float)
        if self.n == 1:
            return np.full(u.shape, self.lo)
        i = np.clip(np.searchsorted(self.cdf, u, side="right"), 0, self.n - 1)
        return self.grid[i]

    # -- constructors ----------------------------------------------------

    @classmethod
    def point_mass(cls, x: float) -> "EmpiricalDistribution":
        return cls(x, x, np.ones(1))

    @classmethod
    def from_weights(cls, lo: float, hi: float, weights) -> "EmpiricalDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(lo, hi, w / w.sum())

    @classmethod
    def from_samples(cls, samples, step: float = 0.1) -> "EmpiricalDistribution":
        """Bin samples onto a lattice of the given resolution."""
        s = np.asarray(samples, dtype=float)
        if s.size == 0:
            raise ValueError("no samples")
        if step <= 0.0:
            raise ValueError("step must be positive")
        idx = np.round(s / step).astype(int)
        i_lo, i_hi = int(idx.min()), int(idx.max())
        if i_lo == i_hi:
            return cls.point_mass(i_lo * step)
        w = np.bincount(idx - i_lo, minlength=i_hi - i_lo + 1).astype(float)
        return cls(i_lo * step, i_hi * step, w / w.sum())


@dataclass(frozen=True)
class QuantileForecast:
    """Quantiles of one forecast distribution at a given horizon step."""

    horizon: int
    issued: int
    levels: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        lv = np.asarray(self.levels, dtype=float)
        qv = np.asarray(self.values, dtype=float)
        if lv.size == 0 or lv.size != qv.size:
            raise ValueError("levels and values must be equal-length and non-empty")
        if np.any(lv <= 0.0) or np.any(lv >= 1.0):
            raise ValueError("quantile levels must lie in (0, 1)")
        if np.any(np.diff(lv) <= 0.0):
            raise ValueError("quantile levels must be strictly increasing")
        if np.any(np.diff(qv) < 0.0):
            raise ValueError("quantile values must be non-decreasing")
        object.__setattr__(self, "levels", tuple(float(v) for v in lv))
        object.__setattr__(self, "values", tuple(float(v) for v in qv))

    def tail_knots(self) -> tuple[np.ndarray, np.ndarray]:
        """CDF knots extended by linear ramps to 0/1 over one inter-quantile spacing."""
        lv = np.asarray(self.levels)
        qv = np.asarray(self.values)
        if qv.size == 1 or qv[-1] == qv[0]:
            x = np.array([qv[0]])
            return x, np.array([1.0])
        s_lo = qv[1] - qv[0]
        s_hi = qv[-1] - qv[-2]
        # degenerate adjacent quantiles: fall back to the full span
        if s_lo <= 0.0:
            s_lo = qv[-1] - qv[0]
        if s_hi <= 0.0:
            s_hi = qv[-1] - qv[0]
        xs = np.concatenate(([qv[0] - s_lo], qv, [qv[-1] + s_hi]))
        ps = np.concatenate(([0.0], lv, [1.0]))
        keep = np.concatenate(([True], np.diff(xs) > 0.0))
        return xs[keep], np.maximum.accumulate(ps[keep])

    def cdf_at(self, x) -> np.ndarray:
        xs, ps = self.tail_knots()
        if xs.size == 1:
            return np.where(np.asarray(x, dtype=float) >= xs[0], 1.0, 0.0)
        return np.interp(x, xs, ps, left=0.0, right=1.0)

    def quantile(self, p: float) -> float:
        xs, ps = self.tail_knots()
        if xs.size == 1:
            return float(xs[0])
        return float(np.interp(p, ps, xs))

    def mean(self) -> float:
        """Mean of the tail-extended piecewise-linear CDF (trapezoid on knots)."""
        xs, ps = self.tail_knots()
        if xs.size == 1:
            return float(xs[0])
        mids = 0.5 * (xs[1:] + xs[:-1])
        return float(np.dot(mids, np.diff(ps)))


def distribution_from_quantiles(qf: QuantileForecast,
                                grid: tuple[float, float, int] | None = None,
                                step: float = 0.1) -> EmpiricalDistribution:
    """Bin the tail-extended quantile CDF onto a uniform grid.

    When ``grid`` is omitted a lattice of the given resolution covering the
    tail-extended support is used. A grid narrower than the quantile span is
    rejected.
    """
    xs, ps = qf.tail_knots()
    if xs.size == 1:
        return EmpiricalDistribution.point_mass(float(xs[0]))
    if grid is None:
        lo = np.floor(xs[0] / step) * step
        hi = np.ceil(xs[-1] / step) * step
        n = int(round((hi - lo) / step)) + 1
    else:
        lo, hi, n = grid
        if lo > qf.values[0] or hi < qf.values[-1]:
            raise ValueError(
                f"grid [{lo}, {hi}] narrower than quantile span "
                f"[{qf.values[0]}, {qf.values[-1]}]")
        if n < 2:
            raise ValueError("grid needs at least two points")
    g = np.linspace(lo, hi, n)
    h = g[1] - g[0]
    upper = np.interp(g + 0.5 * h, xs, ps, left=0.0, right=1.0)
    lower = np.interp(g - 0.5 * h, xs, ps, left=0.0, right=1.0)
    w = upper - lower
    w[0] += lower[0]
    w[-1] += 1.0 - upper[-1]
    return EmpiricalDistribution(float(lo), float(hi), w / w.sum())


def _rebin(dist: EmpiricalDistribution, step: float) -> EmpiricalDistribution:
    """Mass-preserving rebinning onto a lattice of a different resolution."""
    idx = np.round(dist.grid / step).astype(int)
    i_lo, i_hi = int(idx.min()), int(idx.max())
    if i_lo == i_hi:
        return EmpiricalDistribution.point_mass(i_lo * step)
    w = np.zeros(i_hi - i_lo + 1)
    np.add.at(w, idx - i_lo, dist.pdf)
    return EmpiricalDistribution(i_lo * step, i_hi * step, w)


def convolve(a: EmpiricalDistribution, b: EmpiricalDistribution) -> EmpiricalDistribution:
    """Distribution of the sum of two independent gridded variables.

    The output grid is the Minkowski sum of the supports at the shared
    resolution; point masses act as pure shifts.
    """
    if a.is_point_mass:
        return b.shifted(a.lo)
    if b.is_point_mass:
        return a.shifted(b.lo)
    if abs(a.step - b.step) > 1e-9 * max(a.step, b.step):
        b = _rebin(b, a.step)
        if b.is_point_mass:
            return a.shifted(b.lo)
    w = np.convolve(a.pdf, b.pdf)
    return EmpiricalDistribution(a.lo + b.lo, a.hi + b.hi, w / w.sum())


@dataclass(frozen=True)
class ArrivalSocDistribution:
    """Plug-in SOC uncertainty of one PEV, supported inside its capacity band."""

    dist: EmpiricalDistribution
    e_min: float
    e_max: float

    def __post_init__(self) -> None:
        if self.dist.lo < self.e_min - MASS_TOL or self.dist.hi > self.e_max + MASS_TOL:
            raise ValueError(
                f"arrival SOC support [{self.dist.lo}, {self.dist.hi}] outside "
                f"capacity [{self.e_min}, {self.e_max}]")

    def mean(self) -> float:
        return self.dist.mean()

    def centered(self) -> EmpiricalDistribution:
        """Zero-mean version used when the expected jump is booked separately."""
        return self.dist.shifted(-self.dist.mean())

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return self.dist.sample(rng, n)


@dataclass(frozen=True)
class ForecastBundle:
    """Day-ahead probabilistic description of the inflexible net power.

    ``expected`` holds the per-step expectation (kW), ``lower``/``upper`` the
    robust band, ``energy_error[k]`` the distribution of the accumulated
    energy forecast error up to (excluding) step ``k`` and ``power_error[k]``
    optionally the per-step power error distribution used by Monte Carlo
    audits.
    """

    start: int
    expected: Mapping[int, float]
    lower: Mapping[int, float]
    upper: Mapping[int, float]
    energy_error: Mapping[int, EmpiricalDistribution]
    power_error: Mapping[int, EmpiricalDistribution] | None = None

    def __post_init__(self) -> None:
        for k, v in self.expected.items():
            if not (self.lower[k] - 1e-6 <= v <= self.upper[k] + 1e-6):
                raise ValueError(f"step {k}: expected {v} outside robust band "
                                 f"[{self.lower[k]}, {self.upper[k]}]")
        e0 = self.energy_error[self.start]
        if not (e0.is_point_mass and abs(e0.lo) < 1e-9):
            raise ValueError("energy error at the window start must be a point mass at 0")

    def steps(self) -> list[int]:
        return sorted(self.expected)


def energy_deviation_distribution(k: int, bundle: ForecastBundle,
                                  arrival_socs: Sequence[EmpiricalDistribution],
                                  ) -> EmpiricalDistribution:
    """Aggregate energy-deviation distribution at step ``k``.

    The accumulated forecast-error distribution enters mirrored (an energy
    shortfall of the inflexible power raises the stored energy drawn from the
    aggregate) and the SOC distribution of every vehicle arrived by ``k`` is
    convolved on top, in arrival order.
    """
    acc = bundle.energy_error[k].mirrored()
    for soc_dist in arrival_socs:
        acc = convolve(acc, soc_dist)
    return acc


def robust_bounds(qf: QuantileForecast, coverage: float = 0.998) -> tuple[float, float]:
    """Symmetric-tail band holding the forecast variable with the given coverage."""
    if not 0.5 < coverage <= 1.0:
        raise ValueError(f"coverage {coverage} outside (0.5, 1]")
    alpha = 0.5 * (1.0 - coverage)
    return qf.quantile(alpha), qf.quantile(1.0 - alpha)
