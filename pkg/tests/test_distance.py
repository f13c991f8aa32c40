import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itu_match.distance import (
    distance,
    distance_batch,
    distance_bisection,
    distance_gradient,
    pareto_weights,
    weighted_welfare_solve,
)
from itu_match.model import (
    Preferences,
    PublicGoodPreferences,
    TransferableUtility,
    TypeSpec,
    make_pair,
    married_utilities,
    pair_problem,
)

from conftest import table_prefs

PG = PublicGoodPreferences(A=0.3, B=0.6, phi=10.0)


def grid_distance(p: PublicGoodPreferences, u, v, tol=1e-5):
    lq = np.linspace(-8, math.log(p.phi), 40001)

    def feasible(z):
        cost = np.exp(u - z - p.A * lq) + np.exp(v - z - p.B * lq) + np.exp(lq)
        return cost.min() <= p.phi

    lo, hi = -20.0, 20.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if feasible(mid) else (mid, hi)
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("u,v,z", [(1.5, 1.5, 0.5), (1.0, 1.0, 0.0), (3.0, -2.0, -0.5)])
def test_tu_closed_form(u, v, z):
    r = distance(2.0, None, u, v)
    assert r.converged
    assert r.z_star == pytest.approx(z, abs=1e-10)
    assert pareto_weights(r) == pytest.approx((0.5, 0.5), abs=1e-10)


def test_public_good_against_grid_oracle():
    r = distance(PG, None, 1.0, 1.0)
    assert r.converged
    assert r.z_star == pytest.approx(grid_distance(PG, 1.0, 1.0), abs=1e-4)
    assert r.z_star == pytest.approx(distance_bisection(pair_problem(PG), 1.0, 1.0, tol=1e-10), abs=1e-8)


def test_sign_contract(prefs, pair):
    r0 = distance(prefs, pair, 0.0, 0.0)
    assert r0.converged
    # point on the frontier: D = 0
    on = distance(prefs, pair, -r0.z_star, -r0.z_star)
    assert on.z_star == pytest.approx(0.0, abs=1e-9)
    inside = distance(prefs, pair, -r0.z_star - 1, -r0.z_star - 1)
    assert inside.z_star < 0


@settings(max_examples=20, deadline=None)
@given(u=st.floats(-3, 3), v=st.floats(-3, 3), t=st.sampled_from([-2.0, -0.5, 0.5, 2.0]))
def test_translation(u, v, t):
    p = table_prefs()
    pair = make_pair(p, TypeSpec("m", wage=18.0, education=0), TypeSpec("w", wage=13.0, education=1))
    a, b = distance(p, pair, u, v), distance(p, pair, u + t, v + t)
    assert a.converged and b.converged
    assert b.z_star == pytest.approx(a.z_star + t, abs=1e-7)


def test_monotone_in_u_and_v(prefs, pair):
    zs = [distance(prefs, pair, u, 0.0).z_star for u in np.linspace(-2, 2, 7)]
    assert np.all(np.diff(zs) > 0)
    zs = [distance(prefs, pair, 0.0, v).z_star for v in np.linspace(-2, 2, 7)]
    assert np.all(np.diff(zs) > 0)


def test_gradient_matches_finite_differences(prefs, pair):
    u, v, h = 0.4, -0.3, 1e-5
    r = distance(prefs, pair, u, v, tol=1e-11)
    du, dv, dth = distance_gradient(r, prefs, pair)
    D = lambda uu, vv: distance(prefs, pair, uu, vv, tol=1e-12).z_star
    assert du == pytest.approx((D(u + h, v) - D(u - h, v)) / (2 * h), rel=1e-4)
    assert dv == pytest.approx((D(u, v + h) - D(u, v - h)) / (2 * h), rel=1e-4)
    assert du + dv == pytest.approx(1.0, abs=1e-8)
    names = prefs.theta_names()
    i = names.index("delta_a[const]")
    assert dth[i] == pytest.approx(-du, abs=1e-10)
    for k in (names.index("eta"), names.index("a[0]")):
        th = prefs.to_theta()
        step = np.zeros_like(th)
        step[k] = h
        Dp = distance(prefs.with_theta(th + step), pair, u, v, tol=1e-12).z_star
        Dm = distance(prefs.with_theta(th - step), pair, u, v, tol=1e-12).z_star
        assert dth[k] == pytest.approx((Dp - Dm) / (2 * h), rel=1e-4, abs=1e-9)


def test_wedge_matches_frontier_slope(prefs, pair):
    r = distance(prefs, pair, 0.2, 0.1, tol=1e-11)
    # frontier through the supporting point: U moves by dU, V by -dU * lam1 / lam2
    U, V = 0.2 - r.z_star, 0.1 - r.z_star
    h = 1e-4
    zp = distance(prefs, pair, U + h, V - h * r.lambda1 / r.lambda2, tol=1e-12).z_star
    assert zp == pytest.approx(0.0, abs=1e-7)


def test_symmetric_pair_equal_weights():
    p = Preferences.from_shares([(0.3, 0.5)], [(0.3, 0.5)], 0.5)
    pair = make_pair(p, TypeSpec("m", wage=15.0), TypeSpec("w", wage=15.0))
    r = distance(p, pair, 0.3, 0.3)
    assert pareto_weights(r) == pytest.approx((0.5, 0.5), abs=1e-9)
    al = weighted_welfare_solve(p, pair, 0.5)
    assert al.c_a == pytest.approx(al.c_b, rel=1e-8)
    assert al.l_a == pytest.approx(al.l_b, rel=1e-8)


def test_weights_reproduce_allocation(prefs, pair):
    r = distance(prefs, pair, 0.1, 0.5, tol=1e-11)
    al = weighted_welfare_solve(prefs, pair, r.lambda1)
    assert al.as_array() == pytest.approx(r.allocation.as_array(), rel=1e-6)


def test_welfare_monotone_in_weight(prefs, pair):
    us = [married_utilities(prefs, pair, weighted_welfare_solve(prefs, pair, lam)) for lam in (0.2, 0.4, 0.6, 0.8)]
    U, V = np.array(us).T
    assert np.all(np.diff(U) > 0) and np.all(np.diff(V) < 0)


def test_welfare_matches_grid_for_public_good():
    lam = 0.35
    al = weighted_welfare_solve(PG, None, lam)
    q = np.linspace(0.01, 9.98, 400)
    qa, Q = np.meshgrid(q, q)
    qb = PG.phi - qa - Q
    ok = qb > 0
    W = np.where(ok, lam * (np.log(qa) + PG.A * np.log(Q)) + (1 - lam) * (np.log(np.where(ok, qb, 1)) + PG.B * np.log(Q)), -np.inf)
    k = np.unravel_index(np.argmax(W), W.shape)
    assert al[0] == pytest.approx(qa[k], abs=0.05)
    assert al[2] == pytest.approx(Q[k], abs=0.05)


def test_welfare_rejects_bad_weight(prefs, pair):
    with pytest.raises(ValueError):
        weighted_welfare_solve(prefs, pair, 1.0)


def test_interior_first_order_conditions(prefs, pair):
    al = weighted_welfare_solve(prefs, pair, 0.45)
    ea, eb = pair.education_man, pair.education_woman
    # consumption-leisure tradeoffs at the wage
    assert prefs.alpha[ea] / al.l_a / (prefs.a[ea] / al.c_a) == pytest.approx(pair.wage_man, rel=1e-6)
    assert prefs.beta[eb] / al.l_b / (prefs.b[eb] / al.c_b) == pytest.approx(pair.wage_woman, rel=1e-6)
    # housework input ratio is set by the technology
    assert al.h_b / al.h_a == pytest.approx((1 - prefs.eta) / prefs.eta * pair.wage_man / pair.wage_woman, rel=1e-6)


def test_efficiency_no_dominating_neighbour(prefs, pair, rng):
    r = distance(prefs, pair, 0.0, 0.0)
    U0, V0 = married_utilities(prefs, pair, r.allocation)
    base = r.allocation.as_array()[:6]
    from itu_match.model import constraint_residuals, couple_allocation

    for _ in range(300):
        x = base * np.exp(rng.normal(0, 0.02, 6))
        al = couple_allocation(prefs, *x)
        if np.any(constraint_residuals(pair, al) > 0):
            continue
        U, V = married_utilities(prefs, pair, al)
        assert not (U > U0 + 1e-9 and V > V0 + 1e-9)


def test_batch_matches_sequential_and_workers(prefs):
    men = [TypeSpec(f"m{i}", wage=10 + 2 * i, education=i % 2) for i in range(4)]
    women = [TypeSpec(f"w{i}", wage=8 + 3 * i, education=(i + 1) % 2) for i in range(3)]
    pairs = [make_pair(prefs, m, w) for m in men for w in women]
    pts = [(0.1 * k, -0.05 * k) for k in range(len(pairs))]
    seq = [distance(prefs, p, u, v) for p, (u, v) in zip(pairs, pts)]
    one = distance_batch(prefs, pairs, pts, worker_count=1)
    two = distance_batch(prefs, pairs, pts, worker_count=2)
    assert [r.z_star for r in one] == [r.z_star for r in seq]
    assert [r.z_star for r in two] == [r.z_star for r in seq]
    assert distance_batch(prefs, pairs[:1], pts[:1])[0].z_star == seq[0].z_star


def test_tu_matrix_model():
    assert distance(TransferableUtility([[1.0]]), None, 0.0, 0.0).z_star == pytest.approx(-0.5, abs=1e-10)
    r = distance(TransferableUtility([[1.0, 3.0]]), (0, 1), 0.0, 0.0)
    assert r.z_star == pytest.approx(-1.5, abs=1e-10)
