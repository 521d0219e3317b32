"""Ensemble statistics and the convergence study across disk radii.

Every reported number carries a frequentist uncertainty: Wilson intervals
for fractions, the DKW band for Kolmogorov-Smirnov distances, binomial
propagation for total-variation distances.  The convergence table runs the
finite-size and limit ensembles side by side for each radius and compares
circling fractions, the first-impact law, impact-count laws and time-t
histograms.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .boltzmann import COLLISION_RATE
from .density import DensityGrid, GridSpec, PointMass, estimate_density, lorentz_density
from .geometry import MagneticConfig, ParticleState
from .lorentz import EnsembleOptions, TrajectorySummary, simulate_ensemble
from .rng import derive_seed


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float, float]:
    """(estimate, lo, hi) 95% Wilson score interval for a binomial fraction."""
    if n <= 0:
        raise ValueError("need at least one sample")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    return p, center - half, center + half


def circling_fraction(flags) -> tuple[float, float, float]:
    """Fraction of circling records with its Wilson 95% interval."""
    flags = list(flags)
    return wilson_interval(sum(1 for f in flags if f), len(flags))


def ks_distance(
    samples,
    cdf,
    n_total: int | None = None,
    domain_right: float | None = None,
) -> float:
    """Sup distance between an empirical CDF and a reference CDF.

    n_total lets the samples be the observed part of a defective variable
    (unobserved samples count in the denominator and never arrive); the sup
    then also checks the right edge of the domain where the reference tops
    out.
    """
    samples = sorted(samples)
    if n_total is None:
        n_total = len(samples)
    if n_total == 0 or (not samples and domain_right is None):
        raise ValueError("no samples")
    d = 0.0
    for i, x in enumerate(samples):
        fx = cdf(x)
        d = max(d, abs((i + 1) / n_total - fx), abs(i / n_total - fx))
    if domain_right is not None:
        d = max(d, abs(len(samples) / n_total - cdf(domain_right)))
    return d


def first_impact_ks(summaries: list[TrajectorySummary], cfg: MagneticConfig) -> float:
    """KS distance of observed first-impact times to 1 - e^{-2s} on [0, T).

    Circling records never produce a first impact; they stay in the
    denominator, matching the defective reference law which tops out at
    1 - e^{-2T}.
    """
    t1 = [s.first_impact_time for s in summaries if s.first_impact_time is not None]
    return ks_distance(
        t1,
        lambda s: 1.0 - math.exp(-COLLISION_RATE * s),
        n_total=len(summaries),
        domain_right=cfg.period,
    )


def poisson_pmf(lam: float, k: int) -> float:
    return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1)) if lam > 0 else float(k == 0)


def collision_count_tv(counts, t: float) -> float:
    """Total variation between empirical impact counts and Poisson(2t).

    The reference is truncated at the maximum observed count plus five and
    its tail mass is charged to the distance.
    """
    counts = list(counts)
    if not counts:
        raise ValueError("no counts")
    lam = COLLISION_RATE * t
    k_max = max(counts) + 5
    emp = Counter(counts)
    n = len(counts)
    tv = 0.0
    ref_mass = 0.0
    for k in range(k_max + 1):
        p = poisson_pmf(lam, k)
        ref_mass += p
        tv += abs(emp.get(k, 0) / n - p)
    tv += 1.0 - ref_mass  # truncated tail counts as unmatched reference mass
    return 0.5 * tv


def l1_density_distance(a: DensityGrid, b: DensityGrid) -> float:
    """Sum of absolute mass differences over cells (overflow bucket included)."""
    if not a.same_geometry(b):
        raise ValueError("grids have different geometry")
    return float(np.abs(a.masses - b.masses).sum()) + abs(a.outside_mass - b.outside_mass)


@dataclass(frozen=True)
class ConvergenceRow:
    eps: float
    n: int
    circling_fraction: float
    circling_lo: float
    circling_hi: float
    ks_first_impact: float
    tv_collision_count: float
    l1_density_without_circling: float
    l1_density_with_circling: float
    other_recollision_fraction: float
    runtime_seconds: float  # reported on stderr, kept out of files


@dataclass(frozen=True)
class ConvergenceReport:
    B: float
    horizon: float
    density_time: float
    count_time: float
    n: int
    n_density: int
    seed: int
    grid: GridSpec
    rows: tuple[ConvergenceRow, ...]


def convergence_table(
    eps_list,
    cfg: MagneticConfig,
    start: ParticleState,
    horizon: float,
    n: int,
    seed: int,
    grid: GridSpec | None = None,
    n_density: int | None = None,
    workers: int = 1,
) -> ConvergenceReport:
    """Run both ensembles per radius and assemble the convergence report.

    The density comparison uses the time 2T (clipped to the horizon) against
    one shared limit-process reference grid; impact counts are read off at
    0.8T.  A failing radius is reported as a NaN row instead of aborting the
    others.
    """
    eps_list = list(eps_list)
    if not eps_list:
        raise ValueError("eps list must not be empty")
    if grid is None:
        grid = GridSpec(start.x, 4.0 * cfg.radius, 64, 64, 32)
    if n_density is None:
        n_density = n
    density_time = min(2.0 * cfg.period, horizon)
    count_time = 0.8 * cfg.period
    f0 = PointMass(start.x, start.v)
    reference = {
        False: estimate_density(
            density_time, f0, n_density, False, grid, cfg,
            derive_seed(seed, "table-boltzmann", 0), workers,
        ),
        True: estimate_density(
            density_time, f0, n_density, True, grid, cfg,
            derive_seed(seed, "table-boltzmann", 1), workers,
        ),
    }
    rows = []
    for eps in eps_list:
        t0 = time.perf_counter()
        try:
            rows.append(
                _converge_row(
                    eps, cfg, start, horizon, n, seed, grid, n_density,
                    density_time, count_time, reference, workers, t0,
                )
            )
        except Exception:
            nan = float("nan")
            rows.append(
                ConvergenceRow(eps, n, nan, nan, nan, nan, nan, nan, nan, nan,
                               time.perf_counter() - t0)
            )
    return ConvergenceReport(
        B=cfg.B,
        horizon=horizon,
        density_time=density_time,
        count_time=count_time,
        n=n,
        n_density=n_density,
        seed=seed,
        grid=grid,
        rows=tuple(rows),
    )


def _converge_row(
    eps, cfg, start, horizon, n, seed, grid, n_density,
    density_time, count_time, reference, workers, t0,
) -> ConvergenceRow:
    opts = EnsembleOptions(
        B=cfg.B,
        eps=eps,
        start_x=start.x,
        start_v=start.v,
        horizon=horizon,
        n=n,
        seed=derive_seed(seed, "table-lorentz", eps),
        count_time=count_time,
    )
    summaries = simulate_ensemble(opts, workers)
    frac, lo, hi = circling_fraction(s.circling for s in summaries)
    ks = first_impact_ks(summaries, cfg)
    tv = collision_count_tv([s.impacts_by_count_time for s in summaries], count_time)
    other = sum(1 for s in summaries if s.n_other > 0) / len(summaries)
    l1 = {}
    for with_circ in (False, True):
        mine = lorentz_density(
            density_time, eps, n_density, with_circ, grid, cfg, start,
            derive_seed(seed, "table-lorentz-density", eps, int(with_circ)),
            workers,
        )
        l1[with_circ] = l1_density_distance(mine, reference[with_circ])
    return ConvergenceRow(
        eps=eps,
        n=n,
        circling_fraction=frac,
        circling_lo=lo,
        circling_hi=hi,
        ks_first_impact=ks,
        tv_collision_count=tv,
        l1_density_without_circling=l1[False],
        l1_density_with_circling=l1[True],
        other_recollision_fraction=other,
        runtime_seconds=time.perf_counter() - t0,
    )
