import math

import pytest

from maglorentz.field import FieldConfig, ScattererField
from maglorentz.geometry import (
    Diagnostics,
    MagneticConfig,
    ParticleState,
    advance_free,
    first_hit,
    larmor_center,
    reflect,
    self_recollision_geometry,
    unit,
)
from maglorentz.lorentz import (
    Arc,
    CollisionEvent,
    EnsembleOptions,
    TrajectoryRecord,
    classify_events,
    impacts,
    run_indexed_trajectory,
    run_trajectory,
    sample_points,
    self_recollision_count,
    simulate_ensemble,
    summarize_record,
    trajectory_field,
)
from conftest import make_stream


def injected_field(points, eps=0.05, cell_side=0.25, excluded=(0.0, 0.0)):
    return ScattererField(
        FieldConfig(eps=eps, seed=0, excluded_point=excluded, cell_side=cell_side),
        injected=points,
    )


def test_empty_field_is_circling(cfg4, start_state):
    rec = run_trajectory(injected_field([]), cfg4, start_state, 3 * cfg4.period)
    assert rec.circling
    assert rec.events == ()
    assert len(rec.arcs) == 1
    # the single arc is the periodic orbit clipped at the horizon
    end = rec.eval(rec.horizon)
    ref = advance_free(start_state, rec.horizon, cfg4)
    assert end.x == pytest.approx(ref.x, abs=1e-12)


def test_single_disk_daisy(cfg1, start_state):
    # disk centered on the launch orbit at arc position 1.0
    eps = 0.05
    c = advance_free(start_state, 1.0, cfg1).x
    field = injected_field([c], eps=eps, cell_side=0.5)
    horizon = 5 * cfg1.period
    rec = run_trajectory(field, cfg1, start_state, horizon)
    assert not rec.circling
    imp = impacts(rec)
    assert len(imp) == 1
    # every later event is a repeat hit on the same disk
    kinds = [ev.kind for ev in rec.events]
    assert kinds[0] == "impact"
    assert all(k == "self_recollision" for k in kinds[1:])
    assert len(kinds) > 3
    # first hit matches an independent scan-bisection oracle
    from test_geometry import first_hit_bisection

    t1_oracle = first_hit_bisection(start_state, cfg1, c, eps)
    assert imp[0][0] == pytest.approx(t1_oracle, abs=1e-9)
    # the return gaps all equal the loop time of the contact geometry
    g = self_recollision_geometry(c, rec.events[0].n, rec.eval_left(imp[0][0]).v, eps, cfg1)
    expected_gap = g.return_time(cfg1)
    times = [ev.time for ev in rec.events]
    for a, b in zip(times, times[1:]):
        assert b - a == pytest.approx(expected_gap, abs=1e-9)


def test_single_disk_fast_path_matches_plain_event_loop(cfg1, start_state):
    # reference loop built only from first_hit + reflect (no return map)
    eps = 0.05
    c = advance_free(start_state, 1.0, cfg1).x
    horizon = 4 * cfg1.period
    state = start_state
    t_now = 0.0
    ref_events = []
    last_hit = False
    while True:
        dt = first_hit(state, cfg1, c, eps, 1e-9 * cfg1.period if last_hit else 0.0)
        if dt is None or t_now + dt >= horizon:
            break
        t_now += dt
        at = advance_free(state, dt, cfg1)
        n = unit((at.x[0] - c[0], at.x[1] - c[1]))
        snapped = ParticleState((c[0] + eps * n[0], c[1] + eps * n[1]), at.v)
        state = reflect(snapped, c, eps)
        ref_events.append((t_now, snapped.x))
        last_hit = True
    rec = run_trajectory(injected_field([c], eps=eps, cell_side=0.5), cfg1, start_state, horizon)
    assert len(rec.events) == len(ref_events)
    for ev, (t_ref, x_ref) in zip(rec.events, ref_events):
        assert ev.time == pytest.approx(t_ref, abs=1e-9)
        assert rec.eval(ev.time).x == pytest.approx(x_ref, abs=1e-9)


def synthetic_record(event_ids, cfg):
    events = tuple(
        CollisionEvent(0.1 * (i + 1), oid, (1.0, 0.0), None, 0.3)
        for i, oid in enumerate(event_ids)
    )
    return TrajectoryRecord(
        initial=ParticleState((0.0, 0.0), (1.0, 0.0)),
        horizon=1.0,
        eps=0.01,
        B=cfg.B,
        arcs=(Arc(0.0, ParticleState((0.0, 0.0), (1.0, 0.0)), 1.0),),
        events=events,
        circling=not events,
        diagnostics=Diagnostics(),
    )


def test_classify_daisy_sequence(cfg4):
    rec = classify_events(synthetic_record([7, 7, 7], cfg4))
    assert [ev.kind for ev in rec.events] == ["impact", "self_recollision", "self_recollision"]


def test_classify_alternating_sequence(cfg4):
    rec = classify_events(synthetic_record([1, 2, 1], cfg4))
    assert [ev.kind for ev in rec.events] == ["impact", "impact", "other_recollision"]


def test_classify_return_after_other(cfg4):
    rec = classify_events(synthetic_record([1, 2, 2, 1, 1], cfg4))
    kinds = [ev.kind for ev in rec.events]
    assert kinds == [
        "impact",
        "impact",
        "self_recollision",
        "other_recollision",
        "self_recollision",
    ]


def test_impacts_of_circling_record(cfg4, start_state):
    rec = run_trajectory(injected_field([]), cfg4, start_state, cfg4.period)
    assert impacts(rec) == []


def test_impacts_precollisional(cfg4):
    opts = EnsembleOptions(B=4.0, eps=0.02, start_x=(0.0, 0.0), start_v=(1.0, 0.0),
                           horizon=3 * cfg4.period, n=40, seed=2024)
    for idx in range(opts.n):
        rec = run_indexed_trajectory(opts, idx)
        for t, n in impacts(rec):
            v = rec.eval_left(t).v
            assert v[0] * n[0] + v[1] * n[1] <= 1e-12


def test_self_recollision_count_gaps(cfg4, start_state):
    # coupled single-disk runs with prescribed gaps
    from maglorentz.boltzmann import BoltzmannPath
    from maglorentz.coupling import couple
    from maglorentz.geometry import rotate

    T = cfg4.period
    v1 = rotate(cfg4.B * 0.4 * T, (1.0, 0.0))
    n1 = rotate(0.5, (-v1[0], -v1[1]))
    for gap, expected in ((0.5 * T, 0), (2.5 * T, 2)):
        path = BoltzmannPath(horizon=0.4 * T + gap, circling=False, events=((0.4 * T, n1),))
        pair = couple(path, cfg4.radius / 200.0, cfg4, start_state)
        assert self_recollision_count(pair.lorentz, 0) == expected


def test_invariants_over_random_ensemble(cfg4):
    opts = EnsembleOptions(B=4.0, eps=0.02, start_x=(0.0, 0.0), start_v=(1.0, 0.0),
                           horizon=3 * cfg4.period, n=30, seed=99)
    for idx in range(opts.n):
        field = trajectory_field(opts, idx)
        rec = run_indexed_trajectory(opts, idx)
        # arcs tile the horizon
        t = 0.0
        for arc in rec.arcs:
            assert arc.start == pytest.approx(t, abs=1e-12)
            t += arc.duration
        assert t == pytest.approx(rec.horizon, abs=1e-9)
        # continuity, unit speed, on-circle, no penetration
        prev_end = None
        for arc in rec.arcs:
            if prev_end is not None:
                assert arc.state.x == pytest.approx(prev_end, abs=1e-9)
            prev_end = advance_free(arc.state, arc.duration, cfg4).x
        for _, st in sample_points(rec, 8):
            assert math.hypot(*st.v) == pytest.approx(1.0, abs=1e-10)
        for arc in rec.arcs:
            q = larmor_center(arc.state, cfg4)
            for j in range(9):
                st = advance_free(arc.state, arc.duration * j / 8, cfg4)
                assert math.hypot(st.x[0] - q[0], st.x[1] - q[1]) == pytest.approx(
                    cfg4.radius, abs=1e-9
                )
            for s in field.scatterers_near_circle(q, cfg4.radius):
                for j in range(17):
                    st = advance_free(arc.state, arc.duration * j / 16, cfg4)
                    d = math.hypot(st.x[0] - s.c[0], st.x[1] - s.c[1])
                    assert d >= opts.eps - 1e-9


def test_determinism_same_seed(cfg4):
    opts = EnsembleOptions(B=4.0, eps=0.02, start_x=(0.0, 0.0), start_v=(1.0, 0.0),
                           horizon=2 * cfg4.period, n=5, seed=31)
    a = [run_indexed_trajectory(opts, i) for i in range(5)]
    b = [run_indexed_trajectory(opts, i) for i in range(5)]
    for ra, rb in zip(a, b):
        assert ra.events == rb.events
        assert ra.arcs == rb.arcs


def test_ensemble_worker_count_invariance(cfg4):
    opts = EnsembleOptions(B=4.0, eps=0.02, start_x=(0.0, 0.0), start_v=(1.0, 0.0),
                           horizon=2 * cfg4.period, n=24, seed=77, count_time=cfg4.period,
                           probe_times=(cfg4.period,))
    assert simulate_ensemble(opts, workers=1) == simulate_ensemble(opts, workers=2)


def test_horizon_truncation_excludes_boundary_event(cfg1, start_state):
    eps = 0.05
    c = advance_free(start_state, 1.0, cfg1).x
    field = injected_field([c], eps=eps, cell_side=0.5)
    full = run_trajectory(field, cfg1, start_state, 2 * cfg1.period)
    t1 = full.events[0].time
    before = run_trajectory(field, cfg1, start_state, t1 * (1.0 - 1e-9))
    assert before.events == ()
    after = run_trajectory(field, cfg1, start_state, t1 * (1.0 + 1e-6))
    assert len(after.events) == 1


def test_other_recollision_fraction_decreases_in_eps(cfg4):
    # at desk scale the re-clip probability per collision is O(eps/R), so the
    # per-record fraction falls as the disks shrink
    fracs = []
    for eps in (0.04, 0.01):
        opts = EnsembleOptions(B=4.0, eps=eps, start_x=(0.0, 0.0), start_v=(1.0, 0.0),
                               horizon=3 * cfg4.period, n=400, seed=505)
        s = simulate_ensemble(opts, workers=2)
        fracs.append(sum(1 for x in s if x.n_other > 0) / len(s))
    assert fracs[1] < fracs[0]


def test_summary_fields(cfg4):
    opts = EnsembleOptions(B=4.0, eps=0.02, start_x=(0.0, 0.0), start_v=(1.0, 0.0),
                           horizon=3 * cfg4.period, n=1, seed=11,
                           probe_times=(1.0,), count_time=2.0)
    rec = run_indexed_trajectory(opts, 0)
    s = summarize_record(rec, opts, 0)
    assert s.n_impacts == len(impacts(rec))
    assert s.impacts_by_count_time == sum(1 for t, _ in impacts(rec) if t < 2.0)
    st = rec.eval(1.0)
    assert s.probes[0] == (st.x[0], st.x[1], st.v[0], st.v[1])
