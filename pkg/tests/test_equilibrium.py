import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itu_match.equilibrium import (
    CONVERGED,
    Equilibrium,
    Market,
    ipfp_solve,
    matching_from_payoffs,
    residuals,
    with_masses,
)
from itu_match.model import PublicGoodPreferences, TransferableUtility, TypeSpec

from conftest import tu_market


@pytest.mark.parametrize("phi,single,couple", [(0.0, 0.5, 0.5), (2 * math.log(2), 1 / 3, 2 / 3)])
def test_one_by_one_tu(phi, single, couple):
    mk = tu_market(phi)
    eq = ipfp_solve(mk.prefs, mk)
    assert eq.status == CONVERGED
    assert eq.mu_x0[0] == pytest.approx(single, abs=1e-12)
    assert eq.mu_0y[0] == pytest.approx(single, abs=1e-12)
    assert eq.mu[0, 0] == pytest.approx(couple, abs=1e-12)
    rep = residuals(mk.prefs, mk, eq)
    assert rep.max_abs <= 1e-12


@settings(max_examples=15, deadline=None)
@given(phi=st.floats(-4, 6), n=st.floats(0.2, 5), m=st.floats(0.2, 5))
def test_one_by_one_tu_quadratic(phi, n, m):
    # mu = sqrt(s_x s_y) e^{phi/2} with s_x = n - mu and s_y = m - mu
    mk = tu_market(phi, n, m)
    eq = ipfp_solve(mk.prefs, mk, tol=1e-12)
    k = math.exp(phi)
    # (n - mu)(m - mu) k = mu^2  ->  (k - 1) mu^2 - k (n + m) mu + k n m = 0
    if abs(k - 1) < 1e-12:
        mu = n * m / (n + m)
    else:
        a, b, c = k - 1, -k * (n + m), k * n * m
        mu = (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert eq.mu[0, 0] == pytest.approx(mu, abs=1e-9)


def test_tu_grid_matches_choo_siow_fixed_point():
    rng = np.random.default_rng(4)
    phi = rng.normal(0, 1, (3, 4))
    men = [TypeSpec(f"m{i}", float(w)) for i, w in enumerate(rng.uniform(0.5, 2, 3))]
    women = [TypeSpec(f"w{i}", float(w)) for i, w in enumerate(rng.uniform(0.5, 2, 4))]
    mk = Market(men, women, family="tu", prefs=TransferableUtility(phi.tolist()))
    eq = ipfp_solve(mk.prefs, mk, tol=1e-12)
    assert eq.converged
    assert eq.mu == pytest.approx(np.sqrt(np.outer(eq.mu_x0, eq.mu_0y)) * np.exp(phi / 2), abs=1e-10)


def test_home_production_market(prefs, market3):
    eq = ipfp_solve(prefs, market3, tol=1e-10)
    assert eq.converged, eq.summary()
    rep = residuals(prefs, market3, eq)
    assert rep.max_abs <= 1e-8
    assert rep.min_mass > 0
    # mass conservation
    assert market3.n.sum() == pytest.approx(eq.mu_x0.sum() + eq.mu.sum(), abs=1e-9)
    assert market3.m.sum() == pytest.approx(eq.mu_0y.sum() + eq.mu.sum(), abs=1e-9)
    # payoffs round trip
    mt = matching_from_payoffs(prefs, market3, eq.u, eq.v)
    assert mt.mu == pytest.approx(eq.mu, abs=1e-10)


def test_warm_start_converges_immediately(prefs, market3):
    eq = ipfp_solve(prefs, market3, tol=1e-10)
    again = ipfp_solve(prefs, market3, tol=1e-10, init=eq)
    assert again.converged and again.iterations <= 2
    assert again.mu == pytest.approx(eq.mu, abs=1e-9)


def test_workers_do_not_change_result(prefs, market3):
    a = ipfp_solve(prefs, market3, tol=1e-10)
    b = ipfp_solve(prefs, market3, tol=1e-10, workers=2)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_public_good_market_converges():
    mk = Market([TypeSpec("m0", 1.0), TypeSpec("m1", 2.0)], [TypeSpec("w0", 1.5)], family="public_good",
                prefs=PublicGoodPreferences(A=0.3, B=0.6, phi=10.0))
    eq = ipfp_solve(mk.prefs, mk, tol=1e-10)
    assert eq.converged
    assert residuals(mk.prefs, mk, eq).max_abs <= 1e-8


def test_matching_from_payoffs_formulae():
    mk = tu_market(0.0)
    mt = matching_from_payoffs(mk.prefs, mk, [math.log(2)], [math.log(2)])
    assert mt.mu[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert mt.mu_x0[0] == pytest.approx(0.5, abs=1e-12)
    # u = -log 0.5 with zero surplus D(u, v) = 0 when v = -u
    mk2 = tu_market(0.0)
    mt2 = matching_from_payoffs(mk2.prefs, mk2, [-math.log(0.5)], [math.log(0.5)])
    assert mt2.mu[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert math.log(mt2.mu[0, 0] / mt2.mu_x0[0]) == pytest.approx(math.log(2), abs=1e-12)


def test_perturbed_masses_show_in_scarcity(prefs, market3):
    eq = ipfp_solve(prefs, market3, tol=1e-10)
    mu = eq.mu.copy()
    mu[1, 2] += 0.01
    rep = residuals(prefs, market3, with_masses(eq, mu))
    assert rep.scarcity_men[1] == pytest.approx(0.01, abs=1e-8)
    assert rep.scarcity_women[2] == pytest.approx(0.01, abs=1e-8)
    assert np.abs(np.delete(rep.scarcity_men, 1)).max() <= 1e-8


def test_market_validation():
    with pytest.raises(ValueError):
        Market([TypeSpec("m", 0.0)], [TypeSpec("w", 1.0)], family="tu", prefs=TransferableUtility([[0.0]]))
    with pytest.raises(ValueError):
        Market([TypeSpec("m"), TypeSpec("m")], [TypeSpec("w")], family="tu", prefs=TransferableUtility([[0.0]]))


def test_max_iter_reports_status(prefs, market3):
    eq = ipfp_solve(prefs, market3, tol=1e-14, max_iter=1, polish=False)
    assert eq.status != CONVERGED
    assert eq.residual > 0
