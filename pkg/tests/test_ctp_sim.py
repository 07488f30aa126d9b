import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctp.ctp_sim import SIGMA, SimParams, TaggedState, merge_cluster, next_collision, \
    overlapping, run_ensemble, run_trajectory
from ctp.errors import BudgetExceeded, CascadeOverflow
from ctp.obstacle_field import ScriptedField
from ctp.volume_dist import VolumeDistribution

PHI = 1.0 / 8.0  # physical length = rescaled length / 2


def scene(positions, volumes, **kw):
    kw.setdefault("T", 10.0)
    p = SimParams(phi=PHI, **kw)
    return p, ScriptedField(np.asarray(positions, float).reshape(-1, 3), volumes)


def rho(p, V, v):
    return p.scale * SIGMA * (V ** (1 / 3) + v ** (1 / 3))


def marched_hit(P, x, r, remaining, ds=1e-3):
    """First s in (0, remaining] with |x - P - s e1| <= r, by marching then bisection."""
    def f(s):
        d = x - P - s * np.array([1.0, 0.0, 0.0])
        return d @ d - r * r
    if f(0.0) <= 0:
        return None
    s_prev = 0.0
    for s in np.arange(ds, remaining + ds, ds):
        s = min(s, remaining)
        if f(s) <= 0:
            lo, hi = s_prev, s
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if f(mid) <= 0:
                    hi = mid
                else:
                    lo = mid
            return hi
        s_prev = s
    return None


@pytest.mark.parametrize("seed", range(12))
def test_next_collision_matches_time_marching(seed):
    rng = np.random.default_rng(seed)
    n = 25
    x = np.column_stack([rng.uniform(0.5, 12.0, n), rng.uniform(-1.2, 1.2, (n, 2))])
    v = rng.uniform(0.1, 2.0, n)
    p, f = scene(x, v, T=2.0, U=1.0)
    state = TaggedState(np.zeros(3), 1.0, 0.0)
    P = np.zeros(3)  # physical center at t = 0
    keep = [k for k in range(n) if np.linalg.norm(x[k] - P) > rho(p, 1.0, v[k]) * 1.001]
    f = ScriptedField(x[keep], v[keep])
    x, v = x[keep], v[keep]
    remaining = p.speed * p.T
    oracle = [marched_hit(P, x[k], rho(p, 1.0, v[k]), remaining) for k in range(len(v))]
    times = [s for s in oracle if s is not None]
    hit = next_collision(state, p, f)
    if not times:
        assert hit is None
        return
    s_min = min(times)
    t_hit, batch = hit
    assert t_hit * p.speed == pytest.approx(s_min, rel=1e-9, abs=1e-12)
    first = {k for k, s in enumerate(oracle) if s is not None and s - s_min < 1e-9}
    got = {int(i[3]) for i in batch.ids}
    assert got == {int(np.flatnonzero(np.all(f._x == x[k], axis=1))[0]) for k in first} or \
        len(got) == len(first)


def test_head_on_binary_merge():
    r = rho(SimParams(phi=PHI), 1.0, 1.0)
    p, f = scene([(3.0, 0.0, 0.0)], [1.0], U=1.0, T=10.0)
    state, log = run_trajectory(p, f)
    (c,) = log.coalescences
    assert c.is_binary
    assert c.t * p.speed == pytest.approx(3.0 - r, rel=1e-12)
    assert state.V == 2.0
    # obstacle rescaled position relative to the moving frame at contact
    y_ob = (np.array([3.0, 0, 0]) - p.speed * c.t * np.array([1.0, 0, 0])) / p.scale
    assert state.Y == pytest.approx(y_ob / 2.0, abs=1e-12)
    assert log.elapsed == pytest.approx(p.T, rel=1e-15)


def test_merge_conserves_volume_weighted_position():
    rng = np.random.default_rng(1)
    x = np.column_stack([rng.uniform(1, 15, 60), rng.uniform(-0.8, 0.8, (60, 2))])
    v = rng.uniform(0.2, 1.5, 60)
    p, f = scene(x, v, U=1.0, T=3.0)
    _, log = run_trajectory(p, f)
    assert len(log.coalescences) > 3
    e1 = np.array([1.0, 0.0, 0.0])
    for c in log.coalescences:
        Vm, moment = c.V_before, c.V_before * c.Y_before
        for step in c.steps:
            for ob_id, vol, _ in step:
                k = ob_id[3]  # scripted ids carry the input index
                assert vol == v[k]
                moment = moment + vol * (x[k] - p.speed * c.t * e1) / p.scale
                Vm += vol
        assert c.V_after == pytest.approx(Vm, rel=1e-14)
        assert c.Y_after == pytest.approx(moment / Vm, abs=1e-9)


def test_paper_literal_rule_divides_by_old_volume():
    p, f = scene([(3.0, 0.4, 0.0)], [1.0], U=1.0, T=10.0, merge_rule="paper_literal")
    q = replace(p, merge_rule="center_of_mass")
    s1, _ = run_trajectory(p, f)
    s2, _ = run_trajectory(q, f)
    assert s1.V == s2.V == 2.0
    assert s1.Y == pytest.approx(2.0 * s2.Y)


def test_touching_at_start_counts_as_overlap():
    p = SimParams(phi=PHI, T=1.0)
    r = rho(p, 1.0, 1.0)
    f = ScriptedField([(0.0, r, 0.0)], [1.0])
    state, log = run_trajectory(p, f)
    (c,) = log.coalescences
    assert c.t == 0.0 and state.V == 2.0
    assert isinstance(log.events[0], type(c))


def test_symmetric_obstacles_form_one_batch():
    p, f = scene([(3.0, 0.3, 0.0), (3.0, -0.3, 0.0)], [1.0, 1.0], U=1.0)
    state, log = run_trajectory(p, f)
    (c,) = log.coalescences
    assert len(c.steps) == 1 and len(c.steps[0]) == 2
    assert not c.is_binary
    assert state.V == 3.0
    assert state.Y[1] == pytest.approx(0.0, abs=1e-12)


def test_cascade_absorbs_newly_overlapping_obstacle():
    # after the first merge the bigger particle reaches the second obstacle at once
    p0 = SimParams(phi=PHI)
    r11 = rho(p0, 1.0, 1.0)
    r21 = rho(p0, 2.0, 1.0)
    x1 = 2.0
    contact_center = x1 - r11
    merged_center = 0.5 * (contact_center + x1)
    x2 = merged_center + 0.5 * r21  # well inside the grown contact radius
    p, f = scene([(x1, 0, 0), (x2, 0.0, 0.0)], [1.0, 1.0], U=1.0, T=0.5)
    state, log = run_trajectory(p, f)
    (c,) = log.coalescences
    assert len(c.steps) == 2
    assert log.n_cascade_steps == 1
    assert state.V == 3.0


def test_cascade_overflow_and_budget():
    p0 = SimParams(phi=PHI)
    xs = [(2.0 + 0.3 * k, 0, 0) for k in range(6)]
    p, f = scene(xs, [1.0] * 6, U=1.0, T=1.0, max_cascade=1)
    with pytest.raises(CascadeOverflow) as exc:
        run_trajectory(p, f)
    assert exc.value.exit_code == 13
    assert exc.value.log.coalescences
    q = replace(p, max_cascade=10 ** 6, v_ceiling=2.5)
    with pytest.raises(BudgetExceeded) as exc:
        run_trajectory(q, f)
    assert exc.value.state.V > 2.5


def test_empty_space_leaves_state_unchanged():
    p, f = scene(np.zeros((0, 3)), [], Y0=(0.1, 0.2, 0.3), V0=2.0)
    state, log = run_trajectory(p, f)
    assert state.V == 2.0 and tuple(state.Y) == (0.1, 0.2, 0.3)
    assert len(log.flights) == 1 and log.flights[0].duration == p.T
    assert log.flights[0].rescaled_length == pytest.approx(p.U * p.T / p.phi)


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(0.0, 0.99))
@settings(max_examples=40)
def test_hit_time_formula_on_random_offsets(V, v, frac):
    p = SimParams(phi=PHI, T=50.0)
    r = rho(p, V, v)
    b = frac * r
    f = ScriptedField([(5.0, b, 0.0)], [v])
    hit = next_collision(TaggedState(np.zeros(3), V, 0.0), p, f)
    s = 5.0 - math.sqrt(r * r - b * b)
    assert hit is not None
    assert hit[0] * p.speed == pytest.approx(s, rel=1e-12, abs=1e-12)


def test_grazing_contact_is_not_a_hit():
    p = SimParams(phi=PHI, T=50.0)
    r = rho(p, 1.0, 1.0)
    f = ScriptedField([(5.0, r, 0.0)], [1.0])
    assert next_collision(TaggedState(np.zeros(3), 1.0, 0.0), p, f) is None


def test_overlapping_filters_consumed():
    p = SimParams(phi=PHI)
    f = ScriptedField([(0.1, 0, 0), (0.0, 0.2, 0)], [1.0, 1.0])
    st_ = TaggedState(np.zeros(3), 1.0, 0.0)
    b = overlapping(st_, p, f)
    assert len(b.v) == 2
    assert len(overlapping(st_, p, f, {tuple(b.ids[0].tolist())}).v) == 1
    s, ev = merge_cluster(st_, b, 0.0, p, f)
    assert s.V == 3.0 and ev.n_absorbed == 2


def test_poisson_field_trajectory_is_reproducible():
    p = SimParams(phi=1e-3, seed=42, T=1.0)
    a, la = run_trajectory(p)
    b, lb = run_trajectory(p)
    assert a.V == b.V and np.array_equal(a.Y, b.Y)
    assert la.to_jsonl() == lb.to_jsonl()


def test_event_log_records_schema():
    p = SimParams(phi=1e-3, seed=3, T=1.0)
    _, log = run_trajectory(p)
    recs = [json.loads(x) for x in log.to_jsonl().splitlines()]
    assert {r["type"] for r in recs} <= {"flight", "coalescence"}
    for r in recs:
        assert {"type", "t", "l", "ids", "dV", "dY"} <= set(r)
    assert sum(r["dV"] for r in recs) == pytest.approx(log.absorbed_volume())


def test_first_collision_time_is_exponential_at_small_phi():
    # at small phi the first contact is close to Exp(U pi sigma^2 kbar(V0))
    p = SimParams(phi=1e-4, T=0.3)
    ens = run_ensemble(p, 3000, base_seed=5, keep_logs=True)
    lam = math.pi * SIGMA ** 2 * 4.0
    first = np.array([log.coalescences[0].t if log.coalescences else np.inf
                      for log in ens.logs])
    for t in (0.05, 0.1, 0.2):
        surv = np.mean(first > t)
        expected = math.exp(-lam * t)
        assert abs(surv - expected) < 4 * math.sqrt(expected * (1 - expected) / 3000)


def test_ensemble_threads_do_not_change_results(tmp_path):
    p = SimParams(phi=3e-2, T=1.0)
    a = run_ensemble(p, 300, base_seed=9, threads=1, keep_logs=True)
    b = run_ensemble(p, 300, base_seed=9, threads=4, keep_logs=True)
    a.write_csv(tmp_path / "a.csv", "h")
    b.write_csv(tmp_path / "b.csv", "h")
    a.write_events(tmp_path / "a.jsonl")
    b.write_events(tmp_path / "b.jsonl")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.failure_fraction == 0.0
    assert 0 < a.binary_fraction < 1


def test_sim_params_validation():
    with pytest.raises(ValueError):
        SimParams(phi=1.5)
    with pytest.raises(ValueError):
        SimParams(phi=0.1, merge_rule="nearest")
    with pytest.raises(ValueError):
        SimParams(phi=0.1, U=0.0)


def test_uniform_law_ensemble_conserves_volume():
    p = SimParams(phi=1e-2, dist=VolumeDistribution.uniform(0.0, 2.0), T=1.0)
    ens = run_ensemble(p, 200, base_seed=1, keep_logs=True)
    for rec, log in zip(ens.records, ens.logs):
        assert rec.V == pytest.approx(p.V0 + log.absorbed_volume(), rel=1e-12)
