import math

import numpy as np
import pytest
from scipy.optimize import nnls

from fgmerge.constraints import GE, LE, LinearRow, Tag
from fgmerge.qp import (
    FEAS_TOL,
    InternalError,
    QpProblem,
    QpStatus,
    feasible_interval_u,
    objective,
    solve_qp,
)

from qp_oracle import grid_oracle, random_problem, slsqp_oracle

BOUNDS = [LinearRow(1.0, 0.0, -2.0, GE, Tag.CONTROL_LOWER),
          LinearRow(1.0, 0.0, 3.0, LE, Tag.CONTROL_UPPER)]


def test_interior_optimum():
    sol = solve_qp(QpProblem(1.0, 1.0, BOUNDS))
    assert sol.status is QpStatus.OPTIMAL
    assert (sol.u, sol.e) == (1.0, 0.0)
    assert sol.active_set == []


def test_clipped_at_upper_bound():
    sol = solve_qp(QpProblem(5.0, 1.0, BOUNDS))
    assert sol.u == 3.0 and sol.active_set == [Tag.CONTROL_UPPER]


def test_interval_examples():
    assert feasible_interval_u(BOUNDS)[:2] == (-2.0, 3.0)
    rear = LinearRow(-1.8, 0.0, -4.0, GE, Tag.REAR_END_CBF)
    lo, hi, ok = feasible_interval_u(BOUNDS + [rear])
    assert (lo, round(hi, 4), ok) == (-2.0, 2.2222, True)
    assert feasible_interval_u(BOUNDS + [LinearRow(1.0, 0.0, -5.0, LE, Tag.REAR_END_CBF)]).empty


def test_interval_ignores_soft_row():
    clf = LinearRow(4.0, -1.0, -100.0, LE, Tag.CLF)
    assert feasible_interval_u(BOUNDS + [clf]) == feasible_interval_u(BOUNDS)


def test_violated_state_row_empties_interval():
    bad = LinearRow(0.0, 0.0, 0.5, GE, Tag.MERGE_CBF)
    assert feasible_interval_u(BOUNDS + [bad]).empty
    assert solve_qp(QpProblem(0.0, 1.0, BOUNDS + [bad])).status is QpStatus.INFEASIBLE
    good = LinearRow(0.0, 0.0, -0.5, GE, Tag.MERGE_CBF)
    assert not feasible_interval_u(BOUNDS + [good]).empty


def test_clf_trades_tracking_against_relaxation():
    # v - v_ref = 1, eps = 10: 2u + 10 <= e; optimum of e^2 + (u - 1)^2 / 2
    clf = LinearRow(2.0, -1.0, -10.0, LE, Tag.CLF)
    sol = solve_qp(QpProblem(1.0, 1.0, BOUNDS + [clf]))
    # stationarity along e = 2u + 10: (u - 1) + 4 (2u + 10) = 0
    assert sol.u == pytest.approx(-39 / 9 if -39 / 9 >= -2 else -2.0)
    assert sol.e == pytest.approx(2 * sol.u + 10)
    assert Tag.CLF in sol.active_set and Tag.CONTROL_LOWER in sol.active_set


def test_two_soft_rows_is_internal_error():
    clf = LinearRow(2.0, -1.0, -10.0, LE, Tag.CLF)
    with pytest.raises(InternalError):
        solve_qp(QpProblem(0.0, 1.0, BOUNDS + [clf, clf]))


def test_lambda_must_be_positive():
    with pytest.raises(ValueError):
        QpProblem(0.0, 0.0, BOUNDS)


def test_degenerate_single_point():
    rows = [LinearRow(1.0, 0.0, 1.5, GE, Tag.CONTROL_LOWER), LinearRow(1.0, 0.0, 1.5, LE, Tag.CONTROL_UPPER)]
    sol = solve_qp(QpProblem(-4.0, 1.0, rows))
    assert sol.u == 1.5


def _kkt_residual(p, sol):
    grad = np.array([sol.u - p.u_ref, 2 * p.lambda_e * sol.e])
    normals = []
    for r in p.rows:
        if abs(r.slack(sol.u, sol.e)) <= 1e-9 * max(1.0, abs(r.rhs)):
            s = 1.0 if r.sense == GE else -1.0
            normals.append(s * np.array([r.coef_u, r.coef_e]))
    if not normals:
        return float(np.linalg.norm(grad))
    # grad f = sum mu_i n_i with mu >= 0
    _, res = nnls(np.array(normals).T, grad)
    return res


def test_random_problems_against_oracles():
    rng = np.random.default_rng(11)
    n_opt = n_slsqp = 0
    for _ in range(300):
        u_ref, lam, rows = random_problem(rng)
        p = QpProblem(u_ref, lam, rows)
        sol = solve_qp(p)
        iv = feasible_interval_u(rows)
        assert (sol.status is QpStatus.INFEASIBLE) == iv.empty
        ref = grid_oracle(u_ref, lam, rows)
        if not sol.feasible:
            assert ref is None or iv.hi - iv.lo < 0
            continue
        n_opt += 1
        assert all(r.holds(sol.u, sol.e, FEAS_TOL) for r in rows)
        if ref is not None:
            assert sol.u == pytest.approx(ref[0], abs=2e-4)
            assert objective(p, sol.u, sol.e) <= objective(p, *ref) + 1e-12
        assert _kkt_residual(p, sol) <= 1e-9
        # SLSQP may stop with a line-search warning at this ftol; judge its point
        res = slsqp_oracle(u_ref, lam, rows)
        if all(r.holds(res.x[0], res.x[1], 1e-7) for r in rows):
            n_slsqp += 1
            assert sol.u == pytest.approx(res.x[0], abs=1e-5)
            assert sol.e == pytest.approx(res.x[1], abs=1e-5 * max(1.0, abs(sol.e)))
    assert n_opt > 150 and n_slsqp > 0.9 * n_opt


def test_duplicated_rows_do_not_move_optimum():
    rng = np.random.default_rng(3)
    for _ in range(200):
        u_ref, lam, rows = random_problem(rng)
        base = solve_qp(QpProblem(u_ref, lam, rows))
        hard = [r for r in rows if r.coef_e == 0.0]
        dup = solve_qp(QpProblem(u_ref, lam, rows + hard))
        assert dup.status is base.status
        if base.feasible:
            assert (dup.u, dup.e) == (base.u, base.e)
            looser = LinearRow(1.0, 0.0, 100.0, LE, Tag.CONTROL_UPPER)
            assert solve_qp(QpProblem(u_ref, lam, rows + [looser])).u == base.u


def test_infeasible_solution_has_nan():
    rows = BOUNDS + [LinearRow(-1.0, 0.0, 5.0, GE, Tag.FEAS_REAR)]
    sol = solve_qp(QpProblem(0.0, 1.0, rows))
    assert not sol.feasible and math.isnan(sol.u)
