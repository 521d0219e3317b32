"""Event-driven simulation of a unit-speed particle on Larmor arcs among hard disks.

The trajectory is a chain of exact circular arcs glued by specular
reflections.  On each arc the candidate disks are the ones whose centers lie
in the annulus [R-eps, R+eps] around the current orbit center; the next
event is the minimal first-contact time over the candidates.  Returns to the
disk that was just hit are advanced through the closed-form single-disk
return map instead of root finding, which is both exact and cheap for long
chains of repeat collisions.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, replace
from multiprocessing import Pool
from typing import Iterator, NamedTuple

from .field import FieldConfig, ScattererField, default_cell_side
from .geometry import (
    Diagnostics,
    GRAZING_TOL,
    MagneticConfig,
    ParticleState,
    Vec2,
    advance_free,
    first_hit,
    larmor_center,
    rotate,
    scatter,
    scattering_angle,
    self_recollision_geometry,
    unit,
)
from .rng import derive_seed

IMPACT = "impact"
SELF_RECOLLISION = "self_recollision"
OTHER_RECOLLISION = "other_recollision"

HORIZON_TIE_TOL = 1e-12  # events this close to the horizon are excluded
SIMULTANEOUS_TOL = 1e-12  # hits this close in time are resolved by id order


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    obstacle_id: int
    n: Vec2
    kind: str | None
    theta: float


class Arc(NamedTuple):
    start: float
    state: ParticleState
    duration: float


@dataclass(frozen=True)
class TrajectoryRecord:
    """Piecewise-arc path with timed, classified collision events.

    Arcs tile [0, horizon]; the state attached to an arc is the one at its
    start (right-continuous at events).  circling is True exactly when the
    record carries no events.
    """

    initial: ParticleState
    horizon: float
    eps: float
    B: float
    arcs: tuple[Arc, ...]
    events: tuple[CollisionEvent, ...]
    circling: bool
    diagnostics: Diagnostics

    def _arc_starts(self) -> list[float]:
        return [a.start for a in self.arcs]

    def eval(self, s: float) -> ParticleState:
        """State at time s, right-continuous at event times."""
        if s < -1e-12 or s > self.horizon + 1e-12:
            raise ValueError(f"time {s!r} outside [0, {self.horizon!r}]")
        starts = self._arc_starts()
        j = bisect_right(starts, s) - 1
        j = max(0, min(j, len(self.arcs) - 1))
        arc = self.arcs[j]
        return advance_free(arc.state, s - arc.start, self.cfg)

    def eval_left(self, s: float) -> ParticleState:
        """Left limit of the state at time s (equals eval away from events)."""
        starts = self._arc_starts()
        j = bisect_left(starts, s) - 1
        j = max(0, min(j, len(self.arcs) - 1))
        arc = self.arcs[j]
        return advance_free(arc.state, s - arc.start, self.cfg)

    @property
    def cfg(self) -> MagneticConfig:
        return MagneticConfig(self.B)


def run_trajectory(
    field: ScattererField,
    cfg: MagneticConfig,
    start: ParticleState,
    horizon: float,
    diag: Diagnostics | None = None,
    max_events: int = 1_000_000,
) -> TrajectoryRecord:
    """Exact event loop from time 0 to `horizon`, events classified on return.

    If the initial orbit reaches no disk the particle is circling and the
    whole record is one periodic arc; this is detected from the (empty)
    annulus query, not by waiting out the horizon.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    eps = field.cfg.eps
    radius = cfg.radius
    dt_excl = 1e-9 * cfg.period
    diag = diag if diag is not None else Diagnostics()
    arcs: list[Arc] = []
    raw: list[CollisionEvent] = []
    state = start
    t_now = 0.0
    last_reflection = None  # (scatterer, n_in, v_in, geometry)
    excluded_id = None  # suppress re-detecting the departure root after a no-op
    while True:
        q = larmor_center(state, cfg)
        hits: list[tuple[float, int, object, bool]] = []
        for s in field.scatterers_near_circle(q, radius):
            if last_reflection is not None and s.id == last_reflection[0].id:
                dt = last_reflection[3].return_time(cfg)
                hits.append((dt, s.id, s, True))
            else:
                dt = first_hit(
                    state,
                    cfg,
                    s.c,
                    eps,
                    dt_excl if s.id == excluded_id else 0.0,
                    diag,
                )
                if dt is not None:
                    hits.append((dt, s.id, s, False))
        if not hits:
            arcs.append(Arc(t_now, state, horizon - t_now))
            break
        dt_min = min(h[0] for h in hits)
        tied = [h for h in hits if h[0] - dt_min <= SIMULTANEOUS_TOL]
        if len(tied) > 1:
            diag.simultaneous_hits += 1
        dt, _, scat, is_self = min(tied, key=lambda h: h[1])
        if t_now + dt >= horizon - HORIZON_TIE_TOL:
            arcs.append(Arc(t_now, state, horizon - t_now))
            break
        arcs.append(Arc(t_now, state, dt))
        t_now += dt
        if is_self:
            _, n_prev, v_prev, geom = last_reflection
            n = rotate(2.0 * geom.beta, n_prev)
            v_in = rotate(geom.theta_eps, v_prev)
            x = (scat.c[0] + eps * n[0], scat.c[1] + eps * n[1])
        else:
            st = advance_free(state, dt, cfg)
            n = unit((st.x[0] - scat.c[0], st.x[1] - scat.c[1]))
            x = (scat.c[0] + eps * n[0], scat.c[1] + eps * n[1])  # snap onto the disk
            v_in = st.v
        vdotn = v_in[0] * n[0] + v_in[1] * n[1]
        if abs(vdotn) <= GRAZING_TOL or vdotn > 0.0:
            # tangential contact: no reflection, measure-zero by construction
            diag.grazing_contacts += 1
            state = ParticleState(x, v_in)
            last_reflection = None
            excluded_id = scat.id
            continue
        theta = scattering_angle(n, v_in)
        raw.append(CollisionEvent(t_now, scat.id, n, None, theta))
        if len(raw) > max_events:
            raise RuntimeError(f"more than {max_events} events before the horizon")
        v_out = unit(scatter(n, v_in))
        state = ParticleState(x, v_out)
        last_reflection = (scat, n, v_in, self_recollision_geometry(scat.c, n, v_in, eps, cfg))
        excluded_id = scat.id
    record = TrajectoryRecord(
        initial=start,
        horizon=horizon,
        eps=eps,
        B=cfg.B,
        arcs=tuple(arcs),
        events=tuple(raw),
        circling=not raw,
        diagnostics=diag,
    )
    return classify_events(record)


def classify_events(record: TrajectoryRecord) -> TrajectoryRecord:
    """Assign event kinds: first contact per disk is the impact; a later
    contact is a self_recollision when that disk was also the most recently
    scattered one, otherwise an other_recollision."""
    seen: set[int] = set()
    last_scattered: int | None = None
    classified = []
    for ev in record.events:
        if ev.obstacle_id not in seen:
            kind = IMPACT
            seen.add(ev.obstacle_id)
        elif ev.obstacle_id == last_scattered:
            kind = SELF_RECOLLISION
        else:
            kind = OTHER_RECOLLISION
        last_scattered = ev.obstacle_id
        classified.append(replace(ev, kind=kind))
    return replace(record, events=tuple(classified))


def impacts(record: TrajectoryRecord) -> list[tuple[float, Vec2]]:
    """Ordered (impact time, impact vector) pairs of the record."""
    return [(ev.time, ev.n) for ev in record.events if ev.kind == IMPACT]


def self_recollision_count(record: TrajectoryRecord, i: int) -> int:
    """Number of repeat hits on the i-th impacted disk before the next impact."""
    imp = [ev for ev in record.events if ev.kind == IMPACT]
    if i < 0 or i >= len(imp):
        raise IndexError(f"impact index {i} out of range")
    t_lo = imp[i].time
    t_hi = imp[i + 1].time if i + 1 < len(imp) else record.horizon
    oid = imp[i].obstacle_id
    return sum(
        1
        for ev in record.events
        if ev.kind == SELF_RECOLLISION
        and ev.obstacle_id == oid
        and t_lo < ev.time < t_hi
    )


def sample_points(
    record: TrajectoryRecord, per_arc: int = 64
) -> Iterator[tuple[float, ParticleState]]:
    """Diagnostic samples: per_arc points on each arc plus all arc endpoints."""
    cfg = record.cfg
    for arc in record.arcs:
        for j in range(per_arc + 1):
            dt = arc.duration * j / per_arc
            yield arc.start + dt, advance_free(arc.state, dt, cfg)


# --------------------------------------------------------------------------
# Ensembles: one fresh field realization per trajectory, seeds derived from
# (global seed, index) so results are independent of worker count.


@dataclass(frozen=True)
class EnsembleOptions:
    B: float
    eps: float
    start_x: Vec2
    start_v: Vec2
    horizon: float
    n: int
    seed: int
    cell_side: float | None = None
    probe_times: tuple[float, ...] = ()
    count_time: float | None = None


class TrajectorySummary(NamedTuple):
    index: int
    circling: bool
    first_impact_time: float | None
    n_impacts: int
    n_self: int
    n_other: int
    impacts_by_count_time: int
    probes: tuple[tuple[float, float, float, float], ...]


def trajectory_field(opts: EnsembleOptions, index: int) -> ScattererField:
    cfg = MagneticConfig(opts.B)
    side = opts.cell_side or default_cell_side(opts.eps, cfg.radius)
    return ScattererField(
        FieldConfig(
            eps=opts.eps,
            seed=derive_seed(opts.seed, "field", index),
            excluded_point=opts.start_x,
            cell_side=side,
        )
    )


def run_indexed_trajectory(opts: EnsembleOptions, index: int) -> TrajectoryRecord:
    cfg = MagneticConfig(opts.B)
    start = ParticleState(opts.start_x, opts.start_v)
    return run_trajectory(trajectory_field(opts, index), cfg, start, opts.horizon)


def summarize_record(
    record: TrajectoryRecord, opts: EnsembleOptions, index: int
) -> TrajectorySummary:
    imp = impacts(record)
    n_self = sum(1 for ev in record.events if ev.kind == SELF_RECOLLISION)
    n_other = sum(1 for ev in record.events if ev.kind == OTHER_RECOLLISION)
    by_count = (
        sum(1 for t, _ in imp if t < opts.count_time)
        if opts.count_time is not None
        else 0
    )
    probes = []
    for tp in opts.probe_times:
        st = record.eval(tp)
        probes.append((st.x[0], st.x[1], st.v[0], st.v[1]))
    return TrajectorySummary(
        index=index,
        circling=record.circling,
        first_impact_time=imp[0][0] if imp else None,
        n_impacts=len(imp),
        n_self=n_self,
        n_other=n_other,
        impacts_by_count_time=by_count,
        probes=tuple(probes),
    )


_WORKER_OPTS: EnsembleOptions | None = None


def _init_worker(opts: EnsembleOptions) -> None:
    global _WORKER_OPTS
    _WORKER_OPTS = opts


def _run_summary(index: int) -> TrajectorySummary:
    assert _WORKER_OPTS is not None
    return summarize_record(
        run_indexed_trajectory(_WORKER_OPTS, index), _WORKER_OPTS, index
    )


def simulate_ensemble(opts: EnsembleOptions, workers: int = 1) -> list[TrajectorySummary]:
    """Summaries for trajectories 0..n-1, identical for any worker count."""
    indices = range(opts.n)
    if workers <= 1:
        _init_worker(opts)
        return [_run_summary(i) for i in indices]
    with Pool(workers, initializer=_init_worker, initargs=(opts,)) as pool:
        return pool.map(_run_summary, indices, chunksize=max(1, opts.n // (workers * 8)))
