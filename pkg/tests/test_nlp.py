import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize as sp_minimize

from itu_match import nlp


def test_qp_equality_closed_form():
    H = np.diag([2.0, 4.0])
    g = np.array([-2.0, -8.0])
    A = np.array([[1.0, 1.0]])
    d, y, z, ok = nlp.solve_qp(H, g, A, np.array([1.0]))
    # stationarity 2d1 - 2 + y = 0, 4d2 - 8 + y = 0, d1 + d2 = 1
    assert ok
    assert d == pytest.approx([-1 / 3, 4 / 3])
    assert y[0] == pytest.approx(2 + 2 / 3)


def test_qp_active_inequality():
    d, y, z, ok = nlp.solve_qp(np.eye(2), np.array([-2.0, -2.0]), C=np.array([[1.0, 1.0]]), e=np.array([1.0]))
    assert ok
    assert d == pytest.approx([0.5, 0.5], abs=1e-8)
    assert z[0] == pytest.approx(1.5, abs=1e-8)


def test_qp_nonfinite_input_is_not_ok():
    *_, ok = nlp.solve_qp(np.eye(2), np.array([np.nan, 0.0]))
    assert not ok


def hs071():
    # Hock-Schittkowski 71 with bounds 1 <= x <= 5
    f = lambda x: x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]
    g = lambda x: np.array([
        x[3] * (2 * x[0] + x[1] + x[2]), x[0] * x[3], x[0] * x[3] + 1, x[0] * (x[0] + x[1] + x[2])])
    return nlp.NlpProblem(
        n=4, objective=f, gradient=g, x0=np.array([1.0, 5.0, 5.0, 1.0]),
        eq=lambda x: np.array([x @ x - 40.0]), eq_jac=lambda x: 2 * x[None, :],
        ineq=lambda x: np.concatenate([[25.0 - np.prod(x)], x - 5.0]),
        ineq_jac=lambda x: np.vstack([-np.prod(x) / x, np.eye(4)]),
        lower=np.ones(4),
    )


def test_hs071_bfgs():
    sol = nlp.minimize(hs071(), tol=1e-8)
    assert sol.converged
    assert sol.fun == pytest.approx(17.0140173, abs=1e-6)
    assert sol.x == pytest.approx([1.0, 4.7429994, 3.8211503, 1.3794082], abs=1e-5)
    assert sol.lam_ineq.min() >= -1e-10


@settings(max_examples=25, deadline=None)
@given(c=st.lists(st.floats(-3, 3), min_size=3, max_size=3), r=st.floats(0.5, 3))
def test_ball_projection_matches_scipy(c, r):
    c = np.array(c)
    prob = nlp.NlpProblem(
        n=3, objective=lambda x: float((x - c) @ (x - c)), gradient=lambda x: 2 * (x - c), x0=np.zeros(3),
        ineq=lambda x: np.array([x @ x - r * r]), ineq_jac=lambda x: 2 * x[None, :],
        hessian=lambda x, le, li: 2 * np.eye(3) * (1 + li[0]),
    )
    sol = nlp.minimize(prob, tol=1e-10)
    ref = sp_minimize(lambda x: (x - c) @ (x - c), np.zeros(3), method="SLSQP",
                      constraints=[{"type": "ineq", "fun": lambda x: r * r - x @ x}], options={"ftol": 1e-14})
    assert sol.converged
    assert sol.fun == pytest.approx(ref.fun, abs=1e-6)
    # multiplier: projection onto the sphere has lam = |c|/r - 1 when outside
    norm = np.linalg.norm(c)
    assert sol.lam_ineq[0] == pytest.approx(max(norm / r - 1, 0.0), abs=1e-6)


def _circle_problem(x0):
    return nlp.NlpProblem(
        n=2, objective=lambda x: float(x @ x), gradient=lambda x: 2 * x, x0=np.array(x0),
        eq=lambda x: np.array([x[0] ** 2 - 1.0]), eq_jac=lambda x: np.array([[2 * x[0], 0.0]]),
    )


def test_stationary_infeasibility_is_reported():
    # at x0 = 0 the constraint gradient vanishes: no method can make progress
    sol = nlp.minimize(_circle_problem([0.0, 0.5]), tol=1e-9)
    assert sol.status == nlp.INFEASIBLE
    assert not sol.converged


def test_nearly_degenerate_start_recovers():
    sol = nlp.minimize(_circle_problem([1e-3, 0.5]), tol=1e-9)
    assert sol.converged, sol.status
    assert abs(sol.x[0]) == pytest.approx(1.0, abs=1e-7)
    assert sol.x[1] == pytest.approx(0.0, abs=1e-7)
