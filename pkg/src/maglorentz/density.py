"""Phase-space density estimation for both processes.

Densities on (position box) x (velocity angle) are histograms; every sample
deposits mass 1/N either in its cell or in a single overflow bucket when it
leaves the box, so total mass is conserved exactly and the normalization
checks are meaningful.  A deterministic low-order quadrature of the
one-collision term of the series solution cross-checks the sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import NamedTuple

import numpy as np

from .boltzmann import COLLISION_RATE, build_flow, sample_path
from .geometry import (
    MagneticConfig,
    ParticleState,
    Vec2,
    advance_free,
    rotate,
    scatter,
)
from .lorentz import EnsembleOptions, simulate_ensemble
from .rng import Stream, derive_seed

TAU = math.tau


class GridSpec(NamedTuple):
    """Histogram geometry: square box of given half width around a center,
    nx*ny position bins and na velocity-angle bins."""

    center: Vec2
    half_width: float
    nx: int
    ny: int
    na: int


@dataclass
class DensityGrid:
    spec: GridSpec
    masses: np.ndarray = field(default=None)  # type: ignore[assignment]
    outside_mass: float = 0.0

    def __post_init__(self):
        if self.masses is None:
            self.masses = np.zeros(
                (self.spec.nx, self.spec.ny, self.spec.na), dtype=float
            )

    def deposit(self, x: Vec2, v: Vec2, w: float) -> None:
        spec = self.spec
        gx = (x[0] - spec.center[0] + spec.half_width) / (2.0 * spec.half_width)
        gy = (x[1] - spec.center[1] + spec.half_width) / (2.0 * spec.half_width)
        if not (0.0 <= gx < 1.0 and 0.0 <= gy < 1.0):
            self.outside_mass += w
            return
        ang = math.atan2(v[1], v[0]) % TAU
        ia = min(spec.na - 1, int(ang / TAU * spec.na))
        self.masses[int(gx * spec.nx), int(gy * spec.ny), ia] += w

    @property
    def total_mass(self) -> float:
        """Deposited mass including the overflow bucket."""
        return float(self.masses.sum()) + self.outside_mass

    def same_geometry(self, other: "DensityGrid") -> bool:
        return self.spec == other.spec


def total_mass(grid: DensityGrid) -> float:
    return grid.total_mass


# --------------------------------------------------------------------------
# Initial data


class GaussianIsotropic:
    """Isotropic Gaussian in position times a uniform velocity angle."""

    def __init__(self, center: Vec2, sigma: float):
        if sigma <= 0.0:
            raise ValueError("sigma must be positive")
        self.center = center
        self.sigma = sigma

    def density(self, x: Vec2, v: Vec2) -> float:
        s2 = self.sigma * self.sigma
        dx = x[0] - self.center[0]
        dy = x[1] - self.center[1]
        g = math.exp(-(dx * dx + dy * dy) / (2.0 * s2)) / (TAU * s2)
        return g / TAU  # uniform angle factor

    def sample(self, rng: Stream) -> ParticleState:
        x = (
            self.center[0] + self.sigma * rng.normal(),
            self.center[1] + self.sigma * rng.normal(),
        )
        ang = rng.uniform_in(0.0, TAU)
        return ParticleState(x, (math.cos(ang), math.sin(ang)))


class PointMass:
    """Deterministic initial condition; has a sampler but no pointwise density."""

    def __init__(self, x: Vec2, v: Vec2):
        self.x = x
        self.v = v

    def density(self, x: Vec2, v: Vec2) -> float:
        raise TypeError("a point mass has no pointwise density")

    def sample(self, rng: Stream) -> ParticleState:
        return ParticleState(self.x, self.v)


# --------------------------------------------------------------------------
# Closed-form circling density and the process estimator


def circling_density(
    t: float,
    x: Vec2,
    v: Vec2,
    f0,
    cfg: MagneticConfig,
    strict_paper: bool = False,
) -> float:
    """Density of never-colliding particles at (t, x, v).

    e^{-2 min(t, T)} times the initial density at the backward free flow.
    The physical convention keeps rotating for t beyond one period; the
    strict_paper flag freezes the flow argument at one period instead (the
    two agree at every multiple of T because the free flow is periodic).
    """
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    t_flow = min(t, cfg.period) if strict_paper else t
    pre = advance_free(ParticleState(x, v), -t_flow, cfg)
    return math.exp(-COLLISION_RATE * min(t, cfg.period)) * f0.density(pre.x, pre.v)


_BW_ARGS = None


def _init_boltzmann_worker(args) -> None:
    global _BW_ARGS
    _BW_ARGS = args


def _boltzmann_final_state(index: int):
    t, f0, B, seed = _BW_ARGS
    cfg = MagneticConfig(B)
    rng = Stream(derive_seed(seed, "boltzmann", index))
    start = f0.sample(rng)
    path = sample_path(t, cfg, start, rng)
    st = build_flow(path, cfg, start).eval(t)
    return path.circling, path.m, st.x[0], st.x[1], st.v[0], st.v[1]


def boltzmann_final_states(
    t: float, f0, n: int, cfg: MagneticConfig, seed: int, workers: int = 1
) -> list[tuple[bool, int, float, float, float, float]]:
    """(circling, m, x, y, vx, vy) at time t for n independent samples."""
    args = (t, f0, cfg.B, seed)
    if workers <= 1:
        _init_boltzmann_worker(args)
        return [_boltzmann_final_state(i) for i in range(n)]
    with Pool(workers, initializer=_init_boltzmann_worker, initargs=(args,)) as pool:
        return pool.map(_boltzmann_final_state, range(n), chunksize=max(1, n // (workers * 8)))


def estimate_density(
    t: float,
    f0,
    n: int,
    include_circling_after_T: bool,
    spec: GridSpec,
    cfg: MagneticConfig,
    seed: int,
    workers: int = 1,
) -> DensityGrid:
    """Monte Carlo histogram of the limit process at time t.

    Circling samples are deposited only while t < T, unless
    include_circling_after_T keeps them (at their physical phase).
    """
    grid = DensityGrid(spec)
    keep_circling = t < cfg.period or include_circling_after_T
    w = 1.0 / n
    for circ, _, x0, x1, v0, v1 in boltzmann_final_states(t, f0, n, cfg, seed, workers):
        if circ and not keep_circling:
            continue
        grid.deposit((x0, x1), (v0, v1), w)
    return grid


def lorentz_density(
    t: float,
    eps: float,
    n: int,
    include_circling_after_T: bool,
    spec: GridSpec,
    cfg: MagneticConfig,
    start: ParticleState,
    seed: int,
    workers: int = 1,
    cell_side: float | None = None,
) -> DensityGrid:
    """Histogram of the finite-size process at time t (fresh field per sample)."""
    opts = EnsembleOptions(
        B=cfg.B,
        eps=eps,
        start_x=start.x,
        start_v=start.v,
        horizon=t,
        n=n,
        seed=seed,
        cell_side=cell_side,
        probe_times=(t,),
    )
    grid = DensityGrid(spec)
    keep_circling = t < cfg.period or include_circling_after_T
    w = 1.0 / n
    for summary in simulate_ensemble(opts, workers):
        if summary.circling and not keep_circling:
            continue
        px, py, pvx, pvy = summary.probes[0]
        grid.deposit((px, py), (pvx, pvy), w)
    return grid


# --------------------------------------------------------------------------
# Deterministic quadrature of the one-collision term (t < T, no memory terms)


def term_m1_quadrature(
    t: float, f0, x: Vec2, v: Vec2, cfg: MagneticConfig, nodes: int = 128
) -> float:
    """Single-collision contribution to the density at (t, x, v), t < T.

    Tensor Gauss-Legendre quadrature over the collision time and the impact
    angle of the backward flow:
        e^{-2t} * int_0^t dt1 int dpsi cos(psi) f0(backward state at 0).
    """
    if t >= cfg.period:
        raise ValueError("one-collision quadrature requires t < period")
    if t <= 0.0:
        raise ValueError("t must be positive")
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
    t_nodes = 0.5 * t * (gl_x + 1.0)
    t_weights = 0.5 * t * gl_w
    psi_nodes = 0.5 * math.pi * gl_x
    psi_weights = 0.5 * math.pi * gl_w
    state_t = ParticleState(x, v)
    acc = 0.0
    for t1, wt in zip(t_nodes, t_weights):
        at = advance_free(state_t, t1 - t, cfg)  # backward to the collision time
        inner = 0.0
        for psi, wp in zip(psi_nodes, psi_weights):
            n1 = rotate(psi, at.v)  # n.eta^+ = cos(psi) >= 0 on the half circle
            v_minus = scatter(n1, at.v)
            origin = advance_free(ParticleState(at.x, v_minus), -t1, cfg)
            inner += wp * math.cos(psi) * f0.density(origin.x, origin.v)
        acc += wt * inner
    return math.exp(-COLLISION_RATE * t) * acc
