"""Coupling between the finite-size flow and its limit along a shared path.

Given a sampled impact path, the finite-size twin is built by placing each
disk exactly where the running finite-size trajectory must touch it at the
prescribed impact time with the prescribed impact vector.  Both flows then
share all impact data, and their pointwise deviation isolates the effect of
the finite disk size (shorter return loops, shifted contact points), which
shrinks linearly in the disk radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .boltzmann import BoltzmannPath, LimitTrajectory, build_flow, gap_loop_count
from .field import Scatterer
from .geometry import (
    Diagnostics,
    MagneticConfig,
    ParticleState,
    Vec2,
    advance_free,
    arc_point_distance,
    first_hit,
    larmor_center,
    rotate,
    scatter,
    scattering_angle,
    self_recollision_geometry,
    unit,
)
from .lorentz import (
    Arc,
    CollisionEvent,
    TrajectoryRecord,
    classify_events,
)
from .rng import Stream

PLACEMENT_TOL = 1e-9  # slack on the no-overlap test against past arcs


class InadmissiblePathError(ValueError):
    """The disk for event `index` would overlap the earlier trajectory."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"event {index}: {reason}")
        self.index = index
        self.reason = reason


@dataclass(frozen=True)
class CoupledPair:
    path: BoltzmannPath
    eps: float
    placed_obstacles: tuple[Vec2, ...]
    lorentz: TrajectoryRecord
    limit: LimitTrajectory


def _arc_geometry(arc: Arc, cfg: MagneticConfig) -> tuple[Vec2, float, float]:
    q = larmor_center(arc.state, cfg)
    phi0 = math.atan2(arc.state.x[1] - q[1], arc.state.x[0] - q[0])
    return q, phi0, cfg.B * arc.duration


def _min_distance_to_arcs(
    arcs: list[Arc], cfg: MagneticConfig, p: Vec2, radius: float
) -> float:
    best = math.inf
    for arc in arcs:
        q, phi0, span = _arc_geometry(arc, cfg)
        d = arc_point_distance(q, radius, phi0, span, p)
        if d < best:
            best = d
    return best


def couple(
    path: BoltzmannPath, eps: float, cfg: MagneticConfig, start: ParticleState
) -> CoupledPair:
    """Build the finite-size flow realizing the path's impacts exactly.

    Between impacts the particle evolves among the already placed disks
    (returns to the latest disk use the exact single-disk map).  At each
    impact time the new disk center is the current position minus eps times
    the impact vector; if that disk would overlap any earlier piece of the
    trajectory, or the state is not incoming there, the path is inadmissible
    at this eps and the violating event index is reported.
    """
    if path.circling:
        raise ValueError("cannot couple a circling path")
    if path.m == 0:
        raise ValueError("cannot couple a path without events")
    radius = cfg.radius
    diag = Diagnostics()
    placed: list[Scatterer] = []
    arcs: list[Arc] = []
    raw: list[CollisionEvent] = []
    state = start
    t_now = 0.0
    last_reflection = None  # (scatterer, n_in, v_in, geometry)

    def evolve_to(t_target: float) -> None:
        # event-driven advance among placed disks, stopping at t_target
        nonlocal state, t_now, last_reflection
        while True:
            hits: list[tuple[float, int, Scatterer]] = []
            for s in placed:
                if last_reflection is not None and s.id == last_reflection[0].id:
                    dt = last_reflection[3].return_time(cfg)
                else:
                    dt = first_hit(state, cfg, s.c, eps, 0.0, diag)
                if dt is not None:
                    hits.append((dt, s.id, s))
            nxt = min(hits, default=None)
            if nxt is None or t_now + nxt[0] >= t_target - 1e-12:
                arcs.append(Arc(t_now, state, t_target - t_now))
                state = advance_free(state, t_target - t_now, cfg)
                t_now = t_target
                return
            dt, _, scat = nxt
            arcs.append(Arc(t_now, state, dt))
            t_now += dt
            if last_reflection is not None and scat.id == last_reflection[0].id:
                _, n_prev, v_prev, geom = last_reflection
                n = rotate(2.0 * geom.beta, n_prev)
                v_in = rotate(geom.theta_eps, v_prev)
                x = (scat.c[0] + eps * n[0], scat.c[1] + eps * n[1])
            else:
                at = advance_free(state, dt, cfg)
                n = unit((at.x[0] - scat.c[0], at.x[1] - scat.c[1]))
                x = (scat.c[0] + eps * n[0], scat.c[1] + eps * n[1])
                v_in = at.v
            raw.append(
                CollisionEvent(t_now, scat.id, n, None, scattering_angle(n, v_in))
            )
            v_out = unit(scatter(n, v_in))
            state = ParticleState(x, v_out)
            last_reflection = (
                scat,
                n,
                v_in,
                self_recollision_geometry(scat.c, n, v_in, eps, cfg),
            )

    for i, (t_i, n_i) in enumerate(path.events):
        evolve_to(t_i)
        vdotn = state.v[0] * n_i[0] + state.v[1] * n_i[1]
        if vdotn > 1e-9:
            raise InadmissiblePathError(i, "state not incoming at the impact vector")
        c_i = (state.x[0] - eps * n_i[0], state.x[1] - eps * n_i[1])
        d_past = _min_distance_to_arcs(arcs, cfg, c_i, radius)
        if d_past < eps - PLACEMENT_TOL:
            raise InadmissiblePathError(
                i, f"disk overlaps the earlier path (clearance {d_past!r} < eps)"
            )
        scat = Scatterer(i, c_i)
        placed.append(scat)
        raw.append(CollisionEvent(t_i, i, n_i, None, scattering_angle(n_i, state.v)))
        v_in = state.v
        v_out = unit(scatter(n_i, v_in))
        state = ParticleState(state.x, v_out)
        last_reflection = (
            scat,
            n_i,
            v_in,
            self_recollision_geometry(c_i, n_i, v_in, eps, cfg),
        )
    evolve_to(path.horizon)

    record = TrajectoryRecord(
        initial=start,
        horizon=path.horizon,
        eps=eps,
        B=cfg.B,
        arcs=tuple(arcs),
        events=tuple(raw),
        circling=not raw,
        diagnostics=diag,
    )
    return CoupledPair(
        path=path,
        eps=eps,
        placed_obstacles=tuple(s.c for s in placed),
        lorentz=classify_events(record),
        limit=build_flow(path, cfg, start),
    )


def deviation(pair: CoupledPair, grid_step_fraction: float = 1e-3) -> tuple[float, float]:
    """(sup position deviation, max impact velocity deviation) of a pair.

    The supremum runs over a uniform grid of step grid_step_fraction times
    one period plus all event and jump times; velocity deviations are the
    left limits at the shared impact times.
    """
    cfg = pair.limit.cfg
    horizon = pair.path.horizon
    step = grid_step_fraction * cfg.period
    times = [min(j * step, horizon) for j in range(int(horizon / step) + 2)]
    times.extend(ev.time for ev in pair.lorentz.events)
    times.extend(j.time for j in pair.limit.jumps)
    sup_pos = 0.0
    for s in times:
        if s > horizon:
            continue
        a = pair.lorentz.eval(s)
        b = pair.limit.eval(s)
        d = math.hypot(a.x[0] - b.x[0], a.x[1] - b.x[1])
        if d > sup_pos:
            sup_pos = d
    max_vel = 0.0
    for t_i, _ in pair.path.events:
        a = pair.lorentz.eval_left(t_i)
        b = pair.limit.eval_left(t_i)
        d = math.hypot(a.v[0] - b.v[0], a.v[1] - b.v[1])
        if d > max_vel:
            max_vel = d
    return sup_pos, max_vel


@dataclass(frozen=True)
class PathologyFlags:
    returned_to_old_point: bool  # flow re-approaches a collision point later on
    interfered_with_past: bool  # a new collision point sits on the earlier path
    r_indices: tuple[int, ...]
    i_indices: tuple[int, ...]

    @property
    def any(self) -> bool:
        return self.returned_to_old_point or self.interfered_with_past


def detect_pathologies(
    path: BoltzmannPath, flow: LimitTrajectory, tol: float
) -> PathologyFlags:
    """Finite-tolerance surrogate of the measure-zero bad set of paths.

    Flags a path when, within distance tol, (a) the flow after event j+1
    comes back to the collision point of event j, or (b) the collision point
    of event j lies on the path traveled before the last full loop around
    event j-1.  Legal repeat visits inside a gap are not flagged.
    """
    if path.circling or path.m == 0:
        return PathologyFlags(False, False, (), ())
    cfg = flow.cfg
    radius = cfg.radius
    k = path.k(cfg)
    points = [flow.eval(t).x for t, _ in path.events]
    times = [t for t, _ in path.events]
    m = path.m

    def seg_distance(seg, p: Vec2) -> float:
        q = larmor_center(seg.state, cfg)
        phi0 = math.atan2(seg.state.x[1] - q[1], seg.state.x[0] - q[0])
        return arc_point_distance(q, radius, phi0, cfg.B * seg.duration, p)

    r_hits = []
    for j in range(m - 1):
        boundary = times[j + 1]
        d = min(
            (
                seg_distance(seg, points[j])
                for seg in flow.segments
                if seg.start >= boundary - 1e-12
            ),
            default=math.inf,
        )
        if d < tol:
            r_hits.append(j)
    i_hits = []
    for j in range(1, m):
        boundary = times[j - 1] + k[j - 1] * cfg.period
        d = min(
            (
                seg_distance(seg, points[j])
                for seg in flow.segments
                if seg.start + seg.duration <= boundary + 1e-12
            ),
            default=math.inf,
        )
        if d < tol:
            i_hits.append(j)
    return PathologyFlags(
        returned_to_old_point=bool(r_hits),
        interfered_with_past=bool(i_hits),
        r_indices=tuple(r_hits),
        i_indices=tuple(i_hits),
    )


@dataclass(frozen=True)
class GapArea:
    gap_index: int
    duration: float
    area: float
    sigma: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.area - 3.0 * self.sigma <= self.bound


def tube_and_daisy_area(
    record: TrajectoryRecord, n_mc: int, rng: Stream, strict: bool = True
) -> list[GapArea]:
    """Monte Carlo area of the eps-tube swept between consecutive impacts.

    Gap 0 is the stem before the first impact (the first disk is excluded
    from the region); interior gap i excludes the disks of impacts i and
    i+1.  Each area is checked against twice eps times the gap duration;
    with strict=True a violation beyond three MC sigmas raises.
    """
    cfg = record.cfg
    radius = cfg.radius
    eps = record.eps
    imp = [ev for ev in record.events if ev.kind == "impact"]
    disk_centers = []
    for ev in imp:
        x = record.eval(ev.time).x
        disk_centers.append((x[0] - eps * ev.n[0], x[1] - eps * ev.n[1]))
    cuts = [0.0] + [ev.time for ev in imp] + [record.horizon]
    out: list[GapArea] = []
    for g in range(len(cuts) - 1):
        t_lo, t_hi = cuts[g], cuts[g + 1]
        if t_hi - t_lo <= 0.0:
            out.append(GapArea(g, 0.0, 0.0, 0.0, 0.0))
            continue
        pieces = []  # clipped arcs as (center, phi0, span)
        for arc in record.arcs:
            a_lo = max(arc.start, t_lo)
            a_hi = min(arc.start + arc.duration, t_hi)
            if a_hi - a_lo <= 0.0:
                continue
            st = advance_free(arc.state, a_lo - arc.start, cfg)
            q = larmor_center(st, cfg)
            phi0 = math.atan2(st.x[1] - q[1], st.x[0] - q[0])
            pieces.append((q, phi0, cfg.B * (a_hi - a_lo)))
        xs: list[float] = []
        ys: list[float] = []
        for q, phi0, span in pieces:
            for frac in range(33):
                phi = phi0 + span * frac / 32
                xs.append(q[0] + radius * math.cos(phi))
                ys.append(q[1] + radius * math.sin(phi))
        pad = 1.5 * eps
        x_lo, x_hi = min(xs) - pad, max(xs) + pad
        y_lo, y_hi = min(ys) - pad, max(ys) + pad
        box_area = (x_hi - x_lo) * (y_hi - y_lo)
        excluded = []
        if g - 1 >= 0 and g - 1 < len(disk_centers):
            excluded.append(disk_centers[g - 1])
        if g < len(disk_centers):
            excluded.append(disk_centers[g])
        inside = 0
        for _ in range(n_mc):
            px = rng.uniform_in(x_lo, x_hi)
            py = rng.uniform_in(y_lo, y_hi)
            if any(math.hypot(px - c[0], py - c[1]) <= eps for c in excluded):
                continue
            d = min(
                arc_point_distance(q, radius, phi0, span, (px, py))
                for q, phi0, span in pieces
            )
            if d < eps:
                inside += 1
        p = inside / n_mc
        area = box_area * p
        sigma = box_area * math.sqrt(max(p * (1.0 - p), 1e-12) / n_mc)
        out.append(GapArea(g, t_hi - t_lo, area, sigma, 2.0 * eps * (t_hi - t_lo)))
    if strict:
        bad = [a for a in out if not a.within_bound]
        if bad:
            raise RuntimeError(f"tube area bound violated for gaps {[a.gap_index for a in bad]}")
    return out


# --------------------------------------------------------------------------
# Corpus of coupling-ready paths


def regular_gaps(path: BoltzmannPath, cfg: MagneticConfig, eps_max: float) -> bool:
    """True when no gap sits so close below a whole number of periods that a
    finite-size flow at radius <= eps_max could squeeze in an extra return
    loop (the loop period is shorter by at most 2*asin(eps/R)/B)."""
    if path.circling or path.m == 0:
        return False
    times = [t for t, _ in path.events] + [path.horizon]
    shortfall = 2.0 * math.asin(min(1.0, eps_max / cfg.radius)) / cfg.B
    for i in range(path.m):
        gap = times[i + 1] - times[i]
        loops = gap_loop_count(gap, cfg.period)
        margin = 1.25 * (loops + 1) * shortfall
        if (loops + 1) * cfg.period - gap < margin:
            return False
    return True


def build_coupling_corpus(
    n_paths: int,
    horizon: float,
    cfg: MagneticConfig,
    start: ParticleState,
    seed: int,
    eps_max: float,
    pathology_tol: float | None = None,
    require_regular: bool = True,
    max_tries: int = 100_000,
) -> list[tuple[int, BoltzmannPath]]:
    """Sample paths suited to the finite-size coupling at every eps <= eps_max.

    Skips circling and empty paths, paths inadmissible at eps_max, paths
    flagged pathological at pathology_tol (defaults to twice eps_max) and,
    when require_regular, paths with a gap nearly completing an extra loop.
    Returned ids are the draw indices, so the corpus is seed-stable.
    """
    from .boltzmann import sample_path  # local import avoids a cycle at load

    tol = 2.0 * eps_max if pathology_tol is None else pathology_tol
    corpus: list[tuple[int, BoltzmannPath]] = []
    for idx in range(max_tries):
        if len(corpus) >= n_paths:
            break
        rng = Stream(_corpus_seed(seed, idx))
        path = sample_path(horizon, cfg, start, rng)
        if path.circling or path.m == 0:
            continue
        if require_regular and not regular_gaps(path, cfg, eps_max):
            continue
        flow = build_flow(path, cfg, start)
        if detect_pathologies(path, flow, tol).any:
            continue
        try:
            couple(path, eps_max, cfg, start)
        except InadmissiblePathError:
            continue
        corpus.append((idx, path))
    if len(corpus) < n_paths:
        raise RuntimeError(f"only {len(corpus)} corpus paths found in {max_tries} tries")
    return corpus


def _corpus_seed(seed: int, idx: int) -> int:
    from .rng import derive_seed

    return derive_seed(seed, "coupling-corpus", idx)
