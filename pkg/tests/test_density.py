import cmath
import math

import numpy as np
import pytest
from scipy.integrate import dblquad, solve_ivp

from maglorentz.density import (
    DensityGrid,
    GaussianIsotropic,
    GridSpec,
    PointMass,
    circling_density,
    estimate_density,
    lorentz_density,
    term_m1_quadrature,
    total_mass,
)
from maglorentz.geometry import MagneticConfig, ParticleState
from conftest import make_stream


# --------------------------------------------------------------------------
# Independent oracle: the free flow in complex arithmetic
# x(s) = x0 + v0 (e^{iBs} - 1)/(iB), v(s) = v0 e^{iBs}


def flow_c(x: complex, v: complex, ds: float, B: float) -> tuple[complex, complex]:
    rot = cmath.exp(1j * B * ds)
    return x + v * (rot - 1.0) / (1j * B), v * rot


def scatter_c(n: complex, v: complex) -> complex:
    return v - 2.0 * (v.real * n.real + v.imag * n.imag) * n


def m1_term_oracle(t, f0, x, v, B):
    """Adaptive double quadrature of the one-collision backward term."""

    def integrand(psi, t1):
        x1, v_plus = flow_c(complex(*x), complex(*v), t1 - t, B)
        n1 = v_plus * cmath.exp(1j * psi)  # angle psi from the incoming-side velocity
        v_minus = scatter_c(n1, v_plus)
        x0c, v0c = flow_c(x1, v_minus, -t1, B)
        return math.cos(psi) * f0.density((x0c.real, x0c.imag), (v0c.real, v0c.imag))

    val, _ = dblquad(integrand, 0.0, t, -math.pi / 2, math.pi / 2,
                     epsabs=1e-9, epsrel=1e-7)
    return math.exp(-2.0 * t) * val


def backward_free_ivp(x, v, t, B):
    def rhs(_, y):
        return [y[2], y[3], -B * y[3], B * y[2]]

    sol = solve_ivp(rhs, (0.0, -t), [x[0], x[1], v[0], v[1]],
                    method="DOP853", rtol=1e-12, atol=1e-14)
    y = sol.y[:, -1]
    return (y[0], y[1]), (y[2], y[3])


# --------------------------------------------------------------------------
# grids


def spec64(center=(0.0, 0.0), half=1.0):
    return GridSpec(center, half, 64, 64, 32)


def test_grid_deposit_and_total():
    g = DensityGrid(spec64())
    g.deposit((0.0, 0.0), (1.0, 0.0), 0.25)
    g.deposit((0.5, -0.5), (0.0, -1.0), 0.5)
    g.deposit((7.0, 0.0), (1.0, 0.0), 0.25)  # outside the box
    assert g.total_mass == pytest.approx(1.0, abs=1e-12)
    assert g.outside_mass == pytest.approx(0.25)
    assert float(g.masses.sum()) == pytest.approx(0.75)
    assert total_mass(g) == g.total_mass


def test_grid_angle_binning():
    g = DensityGrid(GridSpec((0.0, 0.0), 1.0, 2, 2, 4))
    g.deposit((0.1, 0.1), (1.0, 0.0), 1.0)  # angle 0 -> bin 0
    g.deposit((0.1, 0.1), (0.0, 1.0), 1.0)  # angle pi/2 -> bin 1
    g.deposit((0.1, 0.1), (-1.0, 0.0), 1.0)  # angle pi -> bin 2
    assert g.masses[1, 1, 0] == 1.0
    assert g.masses[1, 1, 1] == 1.0
    assert g.masses[1, 1, 2] == 1.0


def test_grid_geometry_comparison():
    assert DensityGrid(spec64()).same_geometry(DensityGrid(spec64()))
    assert not DensityGrid(spec64()).same_geometry(DensityGrid(spec64(half=2.0)))


# --------------------------------------------------------------------------
# initial data


def test_gaussian_datum_normalization_and_sampler():
    f0 = GaussianIsotropic((0.3, -0.1), 0.4)
    # integrate the density over a wide box times the angle circle
    xs = np.linspace(-2.7, 3.3, 301)
    ys = np.linspace(-3.1, 2.9, 301)
    dx = xs[1] - xs[0]
    dens = 0.0
    for x in xs:
        for y in ys:
            dens += f0.density((x, y), (1.0, 0.0))
    dens *= dx * dx * math.tau  # uniform over angles
    assert dens == pytest.approx(1.0, abs=1e-3)
    rng = make_stream("gauss")
    pts = [f0.sample(rng) for _ in range(20_000)]
    mx = sum(p.x[0] for p in pts) / len(pts)
    my = sum(p.x[1] for p in pts) / len(pts)
    assert mx == pytest.approx(0.3, abs=3 * 0.4 / math.sqrt(20_000))
    assert my == pytest.approx(-0.1, abs=3 * 0.4 / math.sqrt(20_000))
    for p in pts[:100]:
        assert math.hypot(*p.v) == pytest.approx(1.0, abs=1e-12)


def test_point_mass_has_no_density():
    f0 = PointMass((0.0, 0.0), (1.0, 0.0))
    with pytest.raises(TypeError):
        f0.density((0.0, 0.0), (1.0, 0.0))
    assert f0.sample(make_stream("pm")) == ParticleState((0.0, 0.0), (1.0, 0.0))


# --------------------------------------------------------------------------
# circling density


def test_circling_density_t0(cfg4):
    f0 = GaussianIsotropic((0.0, 0.0), 0.5)
    x, v = (0.2, 0.1), (0.0, 1.0)
    assert circling_density(0.0, x, v, f0, cfg4) == pytest.approx(f0.density(x, v))


def test_circling_density_one_period(cfg4):
    f0 = GaussianIsotropic((0.0, 0.0), 0.5)
    x, v = (0.2, 0.1), (0.0, 1.0)
    got = circling_density(cfg4.period, x, v, f0, cfg4)
    assert got == pytest.approx(math.exp(-2.0 * cfg4.period) * f0.density(x, v), rel=1e-9)


def test_circling_density_half_period_against_integrated_preimage(cfg4):
    f0 = GaussianIsotropic((0.1, 0.0), 0.6)
    x, v = (0.3, -0.2), (0.8, 0.6)
    t = cfg4.period / 2
    x_pre, v_pre = backward_free_ivp(x, v, t, cfg4.B)
    want = math.exp(-2.0 * t) * f0.density(x_pre, v_pre)
    assert circling_density(t, x, v, f0, cfg4) == pytest.approx(want, rel=1e-8)


def test_circling_density_strict_paper_flag(cfg4):
    f0 = GaussianIsotropic((0.0, 0.0), 0.3)
    x, v = (0.2, 0.1), (1.0, 0.0)
    t = 1.5 * cfg4.period
    phys = circling_density(t, x, v, f0, cfg4)
    strict = circling_density(t, x, v, f0, cfg4, strict_paper=True)
    # strict mode freezes the flow argument at one period
    x_pre, v_pre = backward_free_ivp(x, v, cfg4.period, cfg4.B)
    assert strict == pytest.approx(
        math.exp(-2.0 * cfg4.period) * f0.density(x_pre, v_pre), rel=1e-8
    )
    assert phys != pytest.approx(strict, rel=1e-6)


# --------------------------------------------------------------------------
# process density estimates


def test_estimate_density_point_mass_small_t(cfg4):
    f0 = PointMass((0.0, 0.0), (1.0, 0.0))
    g = estimate_density(1e-6, f0, 500, False, spec64(), cfg4, seed=5)
    assert g.total_mass == pytest.approx(1.0, abs=1e-12)
    ix, iy, ia = np.unravel_index(np.argmax(g.masses), g.masses.shape)
    assert g.masses[ix, iy, ia] == pytest.approx(1.0, abs=1e-12)


def test_estimate_density_mass_half_period(cfg4):
    f0 = PointMass((0.0, 0.0), (1.0, 0.0))
    g = estimate_density(0.5 * cfg4.period, f0, 2000, False, spec64(), cfg4, seed=6)
    assert g.total_mass == pytest.approx(1.0, abs=1e-12)
    assert g.outside_mass == 0.0  # travel distance below the box half width


def test_estimate_density_mass_two_periods(cfg4):
    f0 = PointMass((0.0, 0.0), (1.0, 0.0))
    n = 4000
    g = estimate_density(2 * cfg4.period, f0, n, False, spec64(), cfg4, seed=7)
    p_keep = 1.0 - math.exp(-2.0 * cfg4.period)
    sigma = math.sqrt(p_keep * (1 - p_keep) / n)
    assert abs(g.total_mass - p_keep) < 4 * sigma
    g_inc = estimate_density(2 * cfg4.period, f0, n, True, spec64(), cfg4, seed=7)
    assert g_inc.total_mass == pytest.approx(1.0, abs=1e-12)


def test_estimate_density_worker_invariance(cfg4):
    f0 = PointMass((0.0, 0.0), (1.0, 0.0))
    a = estimate_density(cfg4.period, f0, 300, False, spec64(), cfg4, seed=8, workers=1)
    b = estimate_density(cfg4.period, f0, 300, False, spec64(), cfg4, seed=8, workers=2)
    assert np.array_equal(a.masses, b.masses)
    assert a.outside_mass == b.outside_mass


def test_lorentz_density_smoke(cfg4):
    g = lorentz_density(
        0.5 * cfg4.period, 0.02, 300, False, spec64(), cfg4,
        ParticleState((0.0, 0.0), (1.0, 0.0)), seed=9, workers=2,
    )
    assert g.total_mass == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------------
# one-collision quadrature


def test_m1_quadrature_zero_datum(cfg4):
    class Zero:
        def density(self, x, v):
            return 0.0

    assert term_m1_quadrature(0.5 * cfg4.period, Zero(), (0.0, 0.0), (1.0, 0.0), cfg4) == 0.0


def test_m1_quadrature_rejects_long_times(cfg4):
    f0 = GaussianIsotropic((0.0, 0.0), 0.5)
    with pytest.raises(ValueError):
        term_m1_quadrature(1.5 * cfg4.period, f0, (0.0, 0.0), (1.0, 0.0), cfg4)


def test_m1_quadrature_against_adaptive_oracle(cfg4):
    f0 = GaussianIsotropic((0.0, 0.0), 0.5)
    t = 0.5 * cfg4.period
    for x, v in (((0.3, 0.1), (0.0, 1.0)), ((0.0, 0.0), (1.0, 0.0))):
        ours = term_m1_quadrature(t, f0, x, v, cfg4, nodes=128)
        ref = m1_term_oracle(t, f0, x, v, cfg4.B)
        assert ours == pytest.approx(ref, rel=1e-6)


def test_m1_quadrature_node_convergence(cfg4):
    f0 = GaussianIsotropic((0.1, -0.2), 0.4)
    t = 0.4 * cfg4.period
    x, v = (0.2, 0.2), (0.6, 0.8)
    coarse = term_m1_quadrature(t, f0, x, (0.6, 0.8), cfg4, nodes=64)
    fine = term_m1_quadrature(t, f0, x, (0.6, 0.8), cfg4, nodes=128)
    assert coarse == pytest.approx(fine, rel=1e-4)
