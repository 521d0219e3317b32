"""Exact planar geometry for circular (Larmor) motion among hard disks.

A unit-speed charged particle in a uniform transverse magnetic field of
magnitude B moves counterclockwise on circles of radius 1/B with angular
velocity B.  All propagation here is closed form (rotation about the orbit
center), and first contact with a disk is found by circle-circle
intersection, so there is no integrator drift anywhere.

Conventions:
  * velocities are unit vectors; angles are reduced to (-pi, pi];
  * the impact vector n at a contact point x on a disk of center c and
    radius eps is (x - c)/eps and an incoming state satisfies v.n <= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec2 = tuple[float, float]

TAU = math.tau

# Tolerances shared with the event loop.
GRAZING_TOL = 1e-12        # |v.n| below this is a grazing contact (no-op)
TANGENCY_TOL = 1e-12       # circle-circle tangency window treated as a miss
ON_BOUNDARY_TOL = 1e-10    # max | |x-c| - eps | accepted by reflect()


def wrap_angle(a: float) -> float:
    """Reduce an angle to (-pi, pi]."""
    a = math.fmod(a, TAU)
    if a <= -math.pi:
        a += TAU
    elif a > math.pi:
        a -= TAU
    return a


def rotate(alpha: float, v: Vec2) -> Vec2:
    """Counterclockwise rotation of v by alpha."""
    c = math.cos(alpha)
    s = math.sin(alpha)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])


def scatter(n: Vec2, v: Vec2) -> Vec2:
    """Specular reflection v - 2(v.n)n about the unit vector n (involution)."""
    d = 2.0 * (v[0] * n[0] + v[1] * n[1])
    return (v[0] - d * n[0], v[1] - d * n[1])


def scattering_angle(n: Vec2, v: Vec2) -> float:
    """Signed angle theta in (-pi, pi] with rotate(theta, v) == scatter(n, v)."""
    w = scatter(n, v)
    dot = v[0] * w[0] + v[1] * w[1]
    cross = v[0] * w[1] - v[1] * w[0]
    theta = math.atan2(cross, dot)
    if theta <= -math.pi:
        theta = math.pi
    return theta


def unit(v: Vec2) -> Vec2:
    r = math.hypot(v[0], v[1])
    return (v[0] / r, v[1] / r)


@dataclass(frozen=True)
class ParticleState:
    """Phase point: position and unit velocity on the plane."""

    x: Vec2
    v: Vec2


@dataclass(frozen=True)
class MagneticConfig:
    """Uniform transverse field of magnitude B > 0 acting on a unit-speed particle."""

    B: float

    def __post_init__(self):
        if not self.B > 0.0:
            raise ValueError("B must be positive")

    @property
    def radius(self) -> float:
        """Larmor radius 1/B."""
        return 1.0 / self.B

    @property
    def period(self) -> float:
        """Cyclotron period 2*pi/B."""
        return TAU / self.B

    @property
    def omega(self) -> float:
        """Angular velocity of the orbital motion (counterclockwise positive)."""
        return self.B


class Diagnostics:
    """Counters for measure-zero events the dynamics resolves by convention."""

    __slots__ = ("grazing_contacts", "degenerate_tangencies", "simultaneous_hits")

    def __init__(self):
        self.grazing_contacts = 0
        self.degenerate_tangencies = 0
        self.simultaneous_hits = 0

    def as_dict(self) -> dict:
        return {
            "grazing_contacts": self.grazing_contacts,
            "degenerate_tangencies": self.degenerate_tangencies,
            "simultaneous_hits": self.simultaneous_hits,
        }


def iterated_scatter(k: int, n: Vec2, state: ParticleState) -> ParticleState:
    """Rotate the velocity by k times the scattering angle of (n, v); position fixed."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    theta = scattering_angle(n, state.v)
    return ParticleState(state.x, rotate(k * theta, state.v))


def larmor_center(state: ParticleState, cfg: MagneticConfig) -> Vec2:
    """Center of the orbit through state: x + R * rotate(pi/2, v).

    The center sits at +pi/2 from the velocity because the motion solves
    xdot = v, vdot = -B v^perp with v^perp = (v2, -v1), i.e. it turns
    counterclockwise.
    """
    r = cfg.radius
    return (state.x[0] - r * state.v[1], state.x[1] + r * state.v[0])


def advance_free(state: ParticleState, dt: float, cfg: MagneticConfig) -> ParticleState:
    """Collision-free propagation for time dt (closed form, dt of either sign)."""
    a = cfg.B * dt
    c = math.cos(a)
    s = math.sin(a)
    r = cfg.radius
    qx = state.x[0] - r * state.v[1]
    qy = state.x[1] + r * state.v[0]
    dx = state.x[0] - qx
    dy = state.x[1] - qy
    return ParticleState(
        (qx + c * dx - s * dy, qy + s * dx + c * dy),
        (c * state.v[0] - s * state.v[1], s * state.v[0] + c * state.v[1]),
    )


def first_hit(
    state: ParticleState,
    cfg: MagneticConfig,
    c: Vec2,
    eps: float,
    dt_min: float = 0.0,
    diag: Diagnostics | None = None,
) -> float | None:
    """First time dt in (dt_min, T] at which the orbit meets the disk (c, eps).

    Solves the circle-circle intersection of the orbit (center q, radius R)
    with the inflated disk, converts the two contact angles to positive arc
    times in the counterclockwise orientation, and returns the smaller one
    beyond dt_min.  Returns None if the orbit misses the disk; a tangency
    within TANGENCY_TOL of the discriminant boundary is counted in diag and
    treated as a miss.
    """
    r = cfg.radius
    qx = state.x[0] - r * state.v[1]
    qy = state.x[1] + r * state.v[0]
    dx = c[0] - qx
    dy = c[1] - qy
    d = math.hypot(dx, dy)
    lo = abs(r - eps)
    hi = r + eps
    if d >= hi or d <= lo:
        if d < hi + TANGENCY_TOL and d > lo - TANGENCY_TOL and diag is not None:
            diag.degenerate_tangencies += 1
        return None
    if hi - d < TANGENCY_TOL or d - lo < TANGENCY_TOL:
        if diag is not None:
            diag.degenerate_tangencies += 1
        return None
    # law of cosines at the orbit center: half-aperture of the contact chord
    cos_psi = (d * d + r * r - eps * eps) / (2.0 * d * r)
    cos_psi = max(-1.0, min(1.0, cos_psi))
    psi = math.acos(cos_psi)
    phi_c = math.atan2(dy, dx)
    phi_0 = math.atan2(state.x[1] - qy, state.x[0] - qx)
    best = None
    for phi in (phi_c - psi, phi_c + psi):
        arc = math.fmod(phi - phi_0, TAU)
        if arc < 0.0:
            arc += TAU
        dt = arc / cfg.B
        if dt <= dt_min:
            continue
        if best is None or dt < best:
            best = dt
    if best is None:
        return None
    # Newton polish on g(t) = |x(t)-c|^2 - eps^2 removes the acos roundoff
    # amplification of near-tangent crossings
    for _ in range(3):
        at = advance_free(state, best, cfg)
        gx = at.x[0] - c[0]
        gy = at.x[1] - c[1]
        g = gx * gx + gy * gy - eps * eps
        gp = 2.0 * (gx * at.v[0] + gy * at.v[1])
        if gp == 0.0:
            break
        step = g / gp
        if abs(step) > 1e-6 * cfg.period:
            break  # refuse to wander; the closed-form root is authoritative
        best -= step
    if best <= dt_min:
        return None
    return best


def reflect(
    state: ParticleState,
    c: Vec2,
    eps: float,
    diag: Diagnostics | None = None,
) -> ParticleState:
    """Specular reflection at a contact point on the disk (c, eps).

    Requires the state to sit on the boundary (within ON_BOUNDARY_TOL) and be
    incoming (v.n <= 0).  A grazing contact with |v.n| <= GRAZING_TOL is a
    no-op, counted in diag.
    """
    dx = state.x[0] - c[0]
    dy = state.x[1] - c[1]
    dist = math.hypot(dx, dy)
    if abs(dist - eps) > ON_BOUNDARY_TOL:
        raise ValueError(f"state not on disk boundary: |x-c| = {dist!r}, eps = {eps!r}")
    nx = dx / dist
    ny = dy / dist
    vdotn = state.v[0] * nx + state.v[1] * ny
    if abs(vdotn) <= GRAZING_TOL:
        if diag is not None:
            diag.grazing_contacts += 1
        return state
    if vdotn > 0.0:
        raise ValueError("reflect() called on an outgoing state")
    w = scatter((nx, ny), state.v)
    return ParticleState(state.x, unit(w))


@dataclass(frozen=True)
class SelfRecollisionGeometry:
    """Geometry of one return loop around a single disk.

    delta      distance from the outgoing orbit center to the disk center,
               always within [R - eps, R + eps];
    beta       half-angle by which the contact point advances on the disk;
    alpha      velocity correction angle, sin(alpha) = (eps/R) sin(beta);
    theta      ideal scattering angle of the collision, in (-pi, pi];
    theta_eps  finite-size scattering angle theta - 2*alpha.
    """

    delta: float
    beta: float
    alpha: float
    theta: float
    theta_eps: float

    def return_time(self, cfg: MagneticConfig) -> float:
        """Arc time of the return loop: one period minus 2*alpha/B."""
        return (TAU - 2.0 * self.alpha) / cfg.B


def self_recollision_geometry(
    c: Vec2, n: Vec2, v: Vec2, eps: float, cfg: MagneticConfig
) -> SelfRecollisionGeometry:
    """Loop geometry for the incoming state (c + eps*n, v) on the disk (c, eps)."""
    r = cfg.radius
    w = scatter(n, v)  # outgoing velocity
    # center of the outgoing orbit
    px = c[0] + eps * n[0]
    py = c[1] + eps * n[1]
    qx = px - r * w[1]
    qy = py + r * w[0]
    delta = math.hypot(qx - c[0], qy - c[1])
    if delta > r + eps + 1e-9 or delta < r - eps - 1e-9:
        raise ValueError(f"orbit does not return to the disk: delta = {delta!r}")
    cos_beta = (delta * delta - r * r + eps * eps) / (2.0 * delta * eps)
    cos_beta = max(-1.0, min(1.0, cos_beta))
    beta = math.acos(cos_beta)
    sin_alpha = (eps / r) * math.sin(beta)
    sin_alpha = max(-1.0, min(1.0, sin_alpha))
    alpha = math.asin(sin_alpha)
    theta = scattering_angle(n, v)
    return SelfRecollisionGeometry(
        delta=delta,
        beta=beta,
        alpha=alpha,
        theta=theta,
        theta_eps=wrap_angle(theta - 2.0 * alpha),
    )


def self_recollision_map(
    c: Vec2, n: Vec2, v: Vec2, eps: float, cfg: MagneticConfig
) -> tuple[Vec2, Vec2]:
    """Exact jump to the next contact with the same disk.

    Takes the incoming contact (c + eps*n, v) with v.n <= 0, lets the
    particle reflect and run one loop, and returns the next incoming contact:
    position c + eps*rotate(2*beta, n) and velocity rotate(theta_eps, v).
    The returned pair is again precollisional with the same v.n.
    """
    g = self_recollision_geometry(c, n, v, eps, cfg)
    m = rotate(2.0 * g.beta, n)
    return (c[0] + eps * m[0], c[1] + eps * m[1]), rotate(g.theta_eps, v)


def arc_point_distance(
    q: Vec2, r: float, phi0: float, span: float, p: Vec2
) -> float:
    """Distance from p to the counterclockwise arc of circle (q, r).

    The arc starts at angle phi0 and sweeps span >= 0 radians; span >= 2*pi
    means the full circle.
    """
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    d = math.hypot(dx, dy)
    if span >= TAU:
        return abs(d - r)
    off = math.fmod(math.atan2(dy, dx) - phi0, TAU)
    if off < 0.0:
        off += TAU
    if off <= span:
        return abs(d - r)
    ax = q[0] + r * math.cos(phi0)
    ay = q[1] + r * math.sin(phi0)
    bx = q[0] + r * math.cos(phi0 + span)
    by = q[1] + r * math.sin(phi0 + span)
    return min(math.hypot(p[0] - ax, p[1] - ay), math.hypot(p[0] - bx, p[1] - by))
