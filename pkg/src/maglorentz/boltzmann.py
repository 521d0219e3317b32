"""Sampler and piecewise flow of the limiting jump process.

In the low-density limit the particle either completes a full Larmor period
without meeting a disk (probability e^{-2T}, after which it circles forever)
or it collides before one period and then keeps colliding with fresh
zero-size obstacles at Exponential(2) spaced times; impact vectors carry the
cosine law density (n.v)_-/2.  Whenever a gap between consecutive impacts
exceeds j full periods the flow returns to the previous collision point j
times and repeats the same velocity rotation there: that memory effect is
what distinguishes this process from the plain linear Boltzmann one.

The collision rate 2 is the total hard-disk cross section at unit speed and
unit reduced intensity; a quadrature check below pins it at import time.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import NamedTuple

from .geometry import (
    MagneticConfig,
    ParticleState,
    Vec2,
    advance_free,
    rotate,
    scatter,
    scattering_angle,
)
from .rng import Stream

COLLISION_RATE = 2.0


def _total_cross_section(nodes: int = 2048) -> float:
    # midpoint quadrature of the (n.v)_+ kernel over the half circle
    h = math.pi / nodes
    return sum(math.cos(-math.pi / 2 + (j + 0.5) * h) for j in range(nodes)) * h


assert abs(_total_cross_section() - COLLISION_RATE) < 1e-6, "cross-section mismatch"


def gap_loop_count(gap: float, period: float) -> int:
    """Full periods completed inside a gap: floor(gap/T).

    Gaps within roundoff of an exact multiple are floored on the perturbed
    value gap*(1 - 1e-15), a documented measure-zero tie break.
    """
    if gap < 0.0:
        raise ValueError("gap must be nonnegative")
    return int(math.floor(gap * (1.0 - 1e-15) / period))


@dataclass(frozen=True)
class BoltzmannPath:
    """Point of the impact path space: ordered (time, impact vector) pairs.

    circling means the first waiting time exceeded one period, so the sample
    never collides; the events tuple is then empty.  k[i] counts the full
    periods in the gap from event i to event i+1 (the horizon closes the
    last gap).
    """

    horizon: float
    circling: bool
    events: tuple[tuple[float, Vec2], ...]

    @property
    def m(self) -> int:
        return len(self.events)

    def k(self, cfg: MagneticConfig) -> tuple[int, ...]:
        if not self.events:
            return ()
        times = [t for t, _ in self.events] + [self.horizon]
        return tuple(
            gap_loop_count(times[i + 1] - times[i], cfg.period)
            for i in range(len(self.events))
        )


def sample_impact_vector(v: Vec2, rng: Stream) -> Vec2:
    """Unit vector with density (n.v)_-/2 on the half circle n.v <= 0.

    Drawn by inverse CDF of the cosine law: psi = arcsin(2u - 1) and
    n = rotate(psi, -v).
    """
    psi = math.asin(2.0 * rng.uniform() - 1.0)
    return rotate(psi, (-v[0], -v[1]))


def sample_path(
    horizon: float, cfg: MagneticConfig, start: ParticleState, rng: Stream
) -> BoltzmannPath:
    """Draw one path on [0, horizon].

    Waiting times are Exponential(2); the first one beyond one period makes
    the sample circling.  Impact vectors are drawn at the precollisional
    velocity of the flow built from the prefix, which only requires tracking
    the velocity phase (free rotation by B*dt plus the repeat rotations).
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    period = cfg.period
    w1 = rng.exponential(COLLISION_RATE)
    if w1 > period:
        return BoltzmannPath(horizon=horizon, circling=True, events=())
    if w1 >= horizon:
        return BoltzmannPath(horizon=horizon, circling=False, events=())
    events: list[tuple[float, Vec2]] = []
    t_i = w1
    v_pre = rotate(cfg.B * t_i, start.v)
    while True:
        n_i = sample_impact_vector(v_pre, rng)
        events.append((t_i, n_i))
        theta = scattering_angle(n_i, v_pre)
        v_post = scatter(n_i, v_pre)
        gap = rng.exponential(COLLISION_RATE)
        t_next = t_i + gap
        if t_next >= horizon:
            break
        loops = gap_loop_count(gap, period)
        v_pre = rotate(cfg.B * gap + loops * theta, v_post)
        t_i = t_next
    return BoltzmannPath(horizon=horizon, circling=False, events=tuple(events))


class Jump(NamedTuple):
    time: float
    kind: str  # "impact" | "self_recollision"
    theta: float


class Segment(NamedTuple):
    start: float
    state: ParticleState
    duration: float


@dataclass(frozen=True)
class LimitTrajectory:
    """Skorokhod trajectory of the limit flow: free arcs plus velocity jumps.

    Velocity jumps happen at the impact times and at whole periods inside
    each gap; positions are continuous throughout, and every repeat jump
    happens exactly at the stored collision point of its gap.
    """

    start: ParticleState
    horizon: float
    B: float
    segments: tuple[Segment, ...]
    jumps: tuple[Jump, ...]

    @property
    def cfg(self) -> MagneticConfig:
        return MagneticConfig(self.B)

    def eval(self, s: float) -> ParticleState:
        """State at time s in [0, horizon], right-continuous at jumps."""
        if s < -1e-12 or s > self.horizon + 1e-12:
            raise ValueError(f"time {s!r} outside [0, {self.horizon!r}]")
        starts = [seg.start for seg in self.segments]
        j = bisect_right(starts, s) - 1
        j = max(0, min(j, len(self.segments) - 1))
        seg = self.segments[j]
        return advance_free(seg.state, s - seg.start, self.cfg)

    def eval_left(self, s: float) -> ParticleState:
        starts = [seg.start for seg in self.segments]
        j = bisect_left(starts, s) - 1
        j = max(0, min(j, len(self.segments) - 1))
        seg = self.segments[j]
        return advance_free(seg.state, s - seg.start, self.cfg)


def build_flow(
    path: BoltzmannPath, cfg: MagneticConfig, start: ParticleState
) -> LimitTrajectory:
    """Forward flow of a path: free arcs, impact scatterings, repeat rotations.

    An impact vector that fails the precollisional sign test contributes a
    zero scattering angle (the flow definition closes over such inputs
    instead of rejecting them).
    """
    segments: list[Segment] = []
    jumps: list[Jump] = []
    period = cfg.period
    state = start
    t_prev = 0.0
    events = () if path.circling else path.events
    for i, (t_i, n_i) in enumerate(events):
        segments.append(Segment(t_prev, state, t_i - t_prev))
        at = advance_free(state, t_i - t_prev, cfg)
        if n_i[0] * at.v[0] + n_i[1] * at.v[1] <= 0.0:
            theta = scattering_angle(n_i, at.v)
            v_cur = scatter(n_i, at.v)
        else:
            theta = 0.0
            v_cur = at.v
        jumps.append(Jump(t_i, "impact", theta))
        anchor = at.x
        t_next = events[i + 1][0] if i + 1 < len(events) else path.horizon
        loops = gap_loop_count(t_next - t_i, period)
        seg_start = t_i
        for j in range(loops):
            segments.append(Segment(seg_start, ParticleState(anchor, v_cur), period))
            seg_start += period
            v_cur = rotate(theta, v_cur)
            jumps.append(Jump(seg_start, "self_recollision", theta))
        state = ParticleState(anchor, v_cur)
        t_prev = seg_start
    segments.append(Segment(t_prev, state, path.horizon - t_prev))
    return LimitTrajectory(
        start=start,
        horizon=path.horizon,
        B=cfg.B,
        segments=tuple(segments),
        jumps=tuple(jumps),
    )


def eval_path_state(
    path: BoltzmannPath, cfg: MagneticConfig, start: ParticleState, s: float
) -> ParticleState:
    """Convenience: state of the flow of `path` at time s."""
    return build_flow(path, cfg, start).eval(s)
