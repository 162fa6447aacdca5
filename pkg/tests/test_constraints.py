import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fgmerge.constraints import (
    GE,
    LE,
    SAFETY_TAGS,
    LinearRow,
    Tag,
    clf_row,
    control_bound_rows,
    feasibility_cbf_row_merge,
    feasibility_cbf_row_rear,
    feasibility_row_merge,
    feasibility_row_rear,
    merge_barrier,
    merge_cbf_row,
    merge_eta_barrier,
    merge_feasibility_barrier,
    rear_end_barrier,
    rear_end_cbf_row,
    rear_eta_barrier,
    rear_feasibility_barrier,
    snapshot_barriers,
    speed_limit_rows,
    upper_bound_only,
)
from fgmerge.vehicle import Lane, NeighborView, SimParams

from conftest import car

GRID = np.round(np.arange(-2.0, 3.0 + 1e-9, 1e-4), 6)


def upper(row):
    """u-bound of a row that only caps u from above."""
    assert upper_bound_only(row)
    return row.rhs / row.coef_u


def grid_max(pred):
    ok = GRID[pred(GRID)]
    return ok.max() if ok.size else None


# -- rear-end -------------------------------------------------------------------

def test_rear_end_barrier_examples(params):
    assert rear_end_barrier(car(0, 20), car(46, 0), params) == pytest.approx(0.0, abs=1e-12)
    assert rear_end_barrier(car(0, 20), car(50, 0), params) == pytest.approx(4.0)
    assert rear_end_barrier(car(0, 0), car(10, 0), params) == 0.0


def test_rear_end_row_examples(params):
    ego, pred = car(0, 20), car(46, 20)
    assert upper(rear_end_cbf_row(ego, pred, params)) == pytest.approx(0.0, abs=1e-12)
    row = rear_end_cbf_row(car(0, 20), car(50, 20), params)
    assert row.coef_u == -1.8 and row.sense == GE and row.tag is Tag.REAR_END_CBF
    assert upper(row) == pytest.approx(2.2222, abs=1e-4)
    # grid oracle: v_ip - v - phi u + k1 b1 >= 0 evaluated directly
    assert grid_max(lambda u: 0.0 - 1.8 * u + 4.0 >= 0) == pytest.approx(upper(row), abs=1e-4)
    p0 = SimParams(k1=0.0)
    assert upper(rear_end_cbf_row(car(0, 16.4), car(60, 20), p0)) == pytest.approx(2.0)


def test_rear_feasibility_row_examples(params):
    row = feasibility_row_rear(car(0, 20), car(50, 20, u=0.0), params)
    assert row.coef_u == -1.0 and row.tag is Tag.FEAS_REAR
    assert upper(row) == pytest.approx(3.6)
    # b_eta1 = 0 -> u <= u_ip
    row = feasibility_row_rear(car(0, 20), car(50, 16.4, u=0.7), params)
    assert rear_eta_barrier(car(0, 20), car(50, 16.4), params) == pytest.approx(0.0, abs=1e-12)
    assert upper(row) == pytest.approx(0.7)
    # predecessor braking at u_min, b_eta1 >= 0 -> u_min is feasible
    row = feasibility_row_rear(car(0, 20), car(50, 17, u=-2.0), params)
    assert row.holds(-2.0)


# -- merging -------------------------------------------------------------------

def other(x, v, u=0.0):
    return car(x, v, u, lane=Lane.MERGING, vid=9)


def test_merge_barrier_examples(params):
    assert merge_barrier(car(0, 20), other(30, 0), params) == pytest.approx(20.0)
    assert merge_barrier(car(400, 20), other(446, 0), params) == pytest.approx(0.0, abs=1e-12)
    assert merge_barrier(car(200, 20), other(300, 0), params) == pytest.approx(72.0)


def test_merge_row_examples(params):
    row = merge_cbf_row(car(0, 20), other(30, 20), params)
    assert row.coef_u == 0.0
    row = merge_cbf_row(car(200, 20), other(300, 20), params)
    assert row.coef_u == pytest.approx(-0.9)
    assert upper(row) == pytest.approx(78.0)
    assert grid_max(lambda u: 0 - 1.8 - 0.9 * u + 72 >= 0) == pytest.approx(3.0)
    # equal speeds on the barrier boundary: u <= -v^2 / x
    ego = car(200, 20)
    pred = other(200 + 0.0045 * 200 * 20 + 10, 20)
    assert merge_barrier(ego, pred, params) == pytest.approx(0.0, abs=1e-12)
    assert upper(merge_cbf_row(ego, pred, params)) == pytest.approx(-400 / 200)


def test_merge_feasibility_row_examples(params):
    # v = 0 -> u <= u_{i-1} + k2 (v_{i-1} - phi2 x u_min)
    row = feasibility_row_merge(car(100, 0), other(150, 12, u=0.5), params)
    assert upper(row) == pytest.approx(0.5 + (12 + 0.0045 * 100 * 2))
    ego, pred = car(200, 20), other(300, 20, u=0.0)
    assert merge_eta_barrier(ego, pred, params) == pytest.approx(0.0, abs=1e-12)
    row = feasibility_row_merge(ego, pred, params)
    assert row.coef_u == pytest.approx(-1.18)
    assert row.holds(-2.0) and not row.holds(3.0)
    # grid oracle on eta2 written out directly
    cap = grid_max(lambda u: 0 - u - 2 * 0.0045 * 20 * u - 0.0045 * 20 * (-2) + 0 >= 0)
    assert cap == pytest.approx(upper(row), abs=1e-4)
    assert cap == pytest.approx(0.18 / 1.18, abs=1e-4)


# -- tracking and limits -----------------------------------------------------------

def test_clf_row_examples(params):
    row = clf_row(car(0, 20), 20.0, params)
    assert (row.coef_u, row.coef_e, row.rhs, row.sense) == (0.0, -1.0, 0.0, LE)
    row = clf_row(car(0, 21), 20.0, params)
    # 2u + 10 <= e
    assert row.lhs(1.0, 12.0) - row.rhs == pytest.approx(2 + 10 - 12)
    assert row.holds(1.0, 12.0) and not row.holds(1.0, 11.9)
    assert clf_row(car(0, 19), 20.0, params).coef_u < 0


def test_control_bounds(params):
    lo, hi = control_bound_rows(params, car(0, 10))
    assert lo == LinearRow(1.0, 0.0, -2.0, GE, Tag.CONTROL_LOWER)
    assert hi == LinearRow(1.0, 0.0, 3.0, LE, Tag.CONTROL_UPPER)
    sym = SimParams(u_min=-2.5, u_max=2.5)
    assert all(r.holds(0.0) for r in control_bound_rows(sym, car(0, 10)))
    deg = car(0, 10)
    deg.u_max = -2.0
    rows = control_bound_rows(params, deg)
    assert [r.holds(u) for r in rows for u in (-2.0,)] == [True, True]
    assert not all(r.holds(-1.9999) for r in rows)


def test_speed_limit_rows(params):
    hi, lo = speed_limit_rows(car(0, 30), params)
    assert hi.tag is Tag.SPEED_MAX_CBF and hi.rhs == 0.0 and hi.sense == LE
    hi, lo = speed_limit_rows(car(0, 0), params)
    assert lo.rhs == 0.0 and lo.sense == GE
    hi, lo = speed_limit_rows(car(0, 15), params)
    assert (hi.rhs, lo.rhs) == (15.0, -15.0)


# -- snapshots ------------------------------------------------------------------------

def test_snapshot_absent_without_predecessors(params):
    snap = snapshot_barriers(car(0, 20), NeighborView(), params)
    assert all(v is None for v in vars(snap).values())


def test_snapshot_same_lane_predecessor_skips_merge(params):
    p = car(60, 20, vid=1)
    snap = snapshot_barriers(car(0, 20), NeighborView(p, p, True), params)
    assert snap.b1 is not None and snap.bF_rear is not None
    assert snap.b2 is None and snap.b_eta2 is None and snap.bF_merge is None


def test_snapshot_full_case_matches_oracle(params):
    ego = car(120, 18)
    ip = car(170, 16, u=-0.5, vid=1)
    im = other(160, 21, u=0.2)
    snap = snapshot_barriers(ego, NeighborView(ip, im, False), params)
    phi, phi2, d, umin = 1.8, 1.8 / 400, 10.0, -2.0
    b1 = 50 - phi * 18 - d
    b2 = 40 - phi2 * 120 * 18 - d
    be1 = 16 - 18 - phi * umin
    be2 = 21 - 18 - phi2 * 18**2 - phi2 * 120 * umin
    expect = dict(b1=b1, b2=b2, b_eta1=be1, b_eta2=be2, bF_rear=be1 + b1, bF_merge=be2 + b2)
    for k, v in expect.items():
        assert getattr(snap, k) == pytest.approx(v, abs=1e-12), k
    assert rear_feasibility_barrier(ego, ip, params) == pytest.approx(be1 + b1)
    assert merge_feasibility_barrier(ego, im, params) == pytest.approx(be2 + b2)


# -- properties ----------------------------------------------------------------------------

states = st.tuples(st.floats(0, 400), st.floats(0, 35), st.floats(-2, 3))


def _pair(ego, pred, lane=Lane.MAIN):
    x, v, _ = ego
    xp, vp, up = pred
    return car(x, v), car(xp, vp, up, lane=lane, vid=1)


def _value(row, u):
    return row.coef_u * u - row.rhs


@given(ego=states, pred=states, k1=st.floats(0, 3), k2=st.floats(0, 3))
def test_eta_chain_identities(ego, pred, k1, k2):
    p = SimParams(k1=k1, k2=k2)
    e, q = _pair(ego, pred)
    for u in (-2.0, 0.3, 3.0):
        lhs = _value(feasibility_row_rear(e, q, p), u) + k1 * _value(rear_end_cbf_row(e, q, p), u)
        rhs = _value(feasibility_cbf_row_rear(e, q, p, k_f=k1), u)
        assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(rhs)))
        lhs = _value(feasibility_row_merge(e, q, p), u) + k2 * _value(merge_cbf_row(e, q, p), u)
        rhs = _value(feasibility_cbf_row_merge(e, q, p, k_f=k2), u)
        assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(rhs)))


def _flow(s, u, h):
    return car(s.x + s.v * h + 0.5 * u * h * h, s.v + u * h, s.u, s.lane, s.id)


@given(ego=states, pred=states, u=st.floats(-2, 3), kf=st.floats(0, 3))
@settings(max_examples=200)
def test_feasibility_cbf_rows_match_finite_differences(ego, pred, u, kf):
    """d/dt bF + kF bF along the dynamics equals the assembled row."""
    p = SimParams()
    e, q = _pair(ego, pred)
    assume(e.v > 1e-3 and q.v > 1e-3)
    h = 1e-6
    for bar, row in ((rear_feasibility_barrier, feasibility_cbf_row_rear(e, q, p, kf)),
                     (merge_feasibility_barrier, feasibility_cbf_row_merge(e, q, p, kf))):
        up = bar(_flow(e, u, h), _flow(q, q.u, h), p)
        dn = bar(_flow(e, u, -h), _flow(q, q.u, -h), p)
        fd = (up - dn) / (2 * h) + kf * bar(e, q, p)
        assert _value(row, u) == pytest.approx(fd, abs=1e-4 * max(1.0, abs(fd)))


@given(ego=states, pred=states, u=st.floats(-2, 3))
def test_sampled_rear_row_is_exact_one_step_difference(ego, pred, u):
    p = SimParams()
    e, q = _pair(ego, pred)
    dt = p.dt
    assume(e.v + u * dt >= 0 and q.v + q.u * dt >= 0)
    b_now = rear_end_barrier(e, q, p)
    b_next = rear_end_barrier(_flow(e, u, dt), _flow(q, q.u, dt), p)
    row = rear_end_cbf_row(e, q, p, dt)
    assert _value(row, u) == pytest.approx((b_next - b_now) / dt + p.k1 * b_now, abs=1e-8)


@given(ego=states, pred=states, u=st.floats(-2, 3))
def test_sampled_merge_rows_bound_one_step_difference(ego, pred, u):
    """The sampled rows never exceed the true one-step difference and equal it at u_min."""
    p = SimParams()
    e, q = _pair(ego, pred, Lane.MERGING)
    dt = p.dt
    assume(e.v + p.u_min * dt >= 0 and q.v + q.u * dt >= 0)
    for bar, row, k in ((merge_barrier, merge_cbf_row(e, q, p, dt), p.k2),
                        (merge_eta_barrier, feasibility_row_merge(e, q, p, dt), p.k2)):
        def diff(w):
            return (bar(_flow(e, w, dt), _flow(q, q.u, dt), p) - bar(e, q, p)) / dt + k * bar(e, q, p)
        tol = 1e-8 * max(1.0, abs(diff(u)))
        assert _value(row, u) <= diff(u) + tol
        assert _value(row, p.u_min) == pytest.approx(diff(p.u_min), abs=1e-8 * max(1.0, abs(diff(p.u_min))))


@given(ego=states, pred=states, dt=st.sampled_from([None, 0.05, 0.2]))
def test_safety_rows_only_cap_u_from_above(ego, pred, dt):
    p = SimParams()
    e, q = _pair(ego, pred)
    rows = [rear_end_cbf_row(e, q, p, dt), feasibility_row_rear(e, q, p),
            merge_cbf_row(e, q, p, dt), feasibility_row_merge(e, q, p, dt)]
    assert {r.tag for r in rows} == SAFETY_TAGS
    assert all(r.coef_u <= 0 and r.sense == GE for r in rows)


def test_braking_witness_on_a_million_states():
    rng = np.random.default_rng(2024)
    n = 1_000_000
    L = rng.uniform(50, 1000, n)
    phi2 = rng.uniform(0.1, 3.0, n) / L
    v = rng.uniform(0, 40, n)
    u_min = -rng.uniform(0, 6, n)
    u_prev = u_min + rng.uniform(0, 10, n)
    # witness u = u_min
    eta = u_prev - u_min - 2 * phi2 * v * u_min - phi2 * v * u_min
    assert np.all(eta >= 0)


def test_feasibility_rows_admit_u_min_when_eta_barriers_hold():
    rng = np.random.default_rng(5)
    p = SimParams()
    for _ in range(20_000):
        e = car(rng.uniform(0, 400), rng.uniform(0, 35))
        q = car(rng.uniform(0, 450), rng.uniform(0, 35), rng.uniform(-2, 3), lane=Lane.MERGING, vid=1)
        if rear_eta_barrier(e, q, p) >= 0:
            assert feasibility_row_rear(e, q, p).holds(p.u_min, tol=1e-12)
        if merge_eta_barrier(e, q, p) >= 0:
            assert feasibility_row_merge(e, q, p).holds(p.u_min, tol=1e-12)
            assert feasibility_row_merge(e, q, p, p.dt).holds(p.u_min, tol=1e-12)
