import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itu_match.analysis import (
    CounterfactualScenario,
    bargaining_decomposition,
    counterfactual,
    identify_eta,
    lindahl_prices,
    sharing_report,
    sharing_rules,
    weighted_summary,
)
from itu_match.distance import distance, weighted_welfare_solve
from itu_match.equilibrium import ipfp_solve
from itu_match.model import Allocation, Preferences, TypeSpec, make_pair, production

from conftest import table_prefs


@pytest.fixture
def symmetric():
    p = Preferences.from_shares([(0.3, 0.5)], [(0.3, 0.5)], 0.5)
    return p, make_pair(p, TypeSpec("m", wage=15.0), TypeSpec("w", wage=15.0))


@pytest.fixture(scope="module")
def base_market():
    from conftest import hp_market

    p = table_prefs()
    mk = hp_market(p, [(14.0, 0), (20.0, 0), (28.0, 1)], [(10.5, 0), (15.0, 1), (21.0, 1)])
    return p, mk, ipfp_solve(p, mk, tol=1e-10)


def test_symmetric_couple(symmetric):
    p, pair = symmetric
    r = distance(p, pair, 0.2, 0.2)
    sr = sharing_rules(p, pair, r)
    assert sr.conditional == pytest.approx(0.5, abs=1e-9)
    assert sr.unconditional == pytest.approx(0.5, abs=1e-9)
    pr = sr.prices
    assert pr.P_aa == pytest.approx(7.5, rel=1e-7) and pr.P_bb == pytest.approx(7.5, rel=1e-7)
    assert pr.P_ab == pytest.approx(7.5, rel=1e-7) and pr.P_ba == pytest.approx(7.5, rel=1e-7)


def test_woman_consumes_nothing_private(pair, prefs):
    al = Allocation(c_a=500.0, c_b=0.0, l_a=40.0, l_b=0.0, h_a=10.0, h_b=10.0, Q=production(prefs, 10.0, 10.0))
    sr = sharing_rules(prefs, pair, al)
    assert sr.conditional == 0.0


def test_small_b_public_valuation_gives_full_price_to_man():
    p = Preferences(a=[0.3], alpha=[0.4], A=[0.3], b=[0.5], beta=[0.5 - 1e-7], B=[1e-7], eta=0.4)
    pair = make_pair(p, TypeSpec("m", wage=20.0), TypeSpec("w", wage=12.0))
    al = weighted_welfare_solve(p, pair, 0.5)
    pr = lindahl_prices(p, pair, al)
    assert pr.P_ba == pytest.approx(0.0, abs=1e-4) and pr.P_bb == pytest.approx(0.0, abs=1e-4)
    assert pr.P_aa == pytest.approx(20.0, rel=1e-4) and pr.P_ab == pytest.approx(12.0, rel=1e-4)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.1, 0.9), wx=st.floats(8, 40), wy=st.floats(8, 40), ex=st.integers(0, 1), ey=st.integers(0, 1))
def test_adding_up_and_expenditure_accounting(lam, wx, wy, ex, ey):
    p = table_prefs()
    pair = make_pair(p, TypeSpec("m", wage=wx, education=ex), TypeSpec("w", wage=wy, education=ey))
    al = weighted_welfare_solve(p, pair, lam)
    sr = sharing_rules(p, pair, al)
    if sr.prices.corner:
        return
    ra, rb = sr.prices.adding_up(pair)
    assert abs(ra) <= 1e-6 and abs(rb) <= 1e-6
    assert sr.man_share + sr.unconditional == pytest.approx(1.0, abs=1e-12)


def test_variants_differ_only_through_mans_leisure_price(prefs, pair):
    r = distance(prefs, pair, 0.0, 0.0)
    c = sharing_rules(prefs, pair, r, "corrected")
    d = sharing_rules(prefs, pair, r, "as-displayed")
    al = r.allocation
    priv_b = al.c_b + pair.wage_woman * al.l_b
    assert c.conditional == pytest.approx(priv_b / (al.c_a + pair.wage_man * al.l_a + priv_b))
    assert d.conditional == pytest.approx(priv_b / (al.c_a + pair.wage_woman * al.l_a + priv_b))
    assert c.unconditional == d.unconditional
    with pytest.raises(ValueError):
        sharing_rules(prefs, pair, r, "literal")


def test_sharing_invariant_to_common_delta_shift(prefs, pair):
    shifted = Preferences.from_dict({**prefs.to_dict(),
                                     "delta_a": {k: v + (0.7 if k == "const" else 0) for k, v in prefs.delta_a.items()},
                                     "delta_b": {k: v + (0.7 if k == "const" else 0) for k, v in prefs.delta_b.items()}})
    pair2 = make_pair(shifted, TypeSpec("m", wage=20.0, education=0), TypeSpec("w", wage=15.0, education=1))
    a = distance(prefs, pair, 0.1, -0.2)
    b = distance(shifted, pair2, 0.1 + 0.7, -0.2 + 0.7)
    assert b.allocation.as_array() == pytest.approx(a.allocation.as_array(), rel=1e-7)
    assert sharing_rules(shifted, pair2, b).unconditional == pytest.approx(sharing_rules(prefs, pair, a).unconditional, abs=1e-9)


def test_weighted_summary_quantiles():
    s = weighted_summary([1.0, 2.0, 3.0, np.nan], [1.0, 1.0, 2.0, 5.0])
    assert s["n"] == 3
    assert s["mean"] == pytest.approx(2.25)
    assert s["median"] == 2.0 and s["q75"] == 3.0


def test_report_weighting_and_corners(base_market):
    p, mk, eq = base_market
    rep = sharing_report(p, mk, eq)
    assert len(rep.records) == 9
    mass = rep.summary()
    pairs = sharing_report(p, mk, eq, weighting="pairs").summary()
    assert mass["conditional"]["n"] == pairs["conditional"]["n"] == 9
    interior = [r for r in rep.records if not r["corner"]]
    assert mass["unconditional"]["n"] == len(interior)
    w = np.array([r["mu"] for r in interior])
    assert mass["unconditional"]["mean"] == pytest.approx(np.average([r["S"] for r in interior], weights=w))
    with pytest.raises(ValueError):
        sharing_report(p, mk, eq, weighting="people")


def test_identity_counterfactual(base_market):
    p, mk, eq = base_market
    res = counterfactual(p, mk, CounterfactualScenario("nothing"), baseline=eq)
    assert res.status == "converged"
    for k in ("delta_S", "delta_S_cond", "delta_housework_share", "delta_lambda2"):
        assert res.comparison[k] == pytest.approx(0.0, abs=1e-8)
    dec = bargaining_decomposition(p, mk, eq, res.equilibrium)
    for r in dec.records:
        assert r["total_Q"] == pytest.approx(0.0, abs=1e-6) and r["power_Q"] == pytest.approx(0.0, abs=1e-6)


def test_womens_wage_rise_direction(base_market):
    p, mk, eq = base_market
    res = counterfactual(p, mk, CounterfactualScenario("raise", wage_women=1.2), baseline=eq)
    assert res.comparison["delta_S"] >= 0
    assert res.comparison["delta_housework_share"] <= 0


def test_more_men_raise_womens_weight(base_market):
    p, mk, eq = base_market
    res = counterfactual(p, mk, CounterfactualScenario("men", mass_men=2.0), baseline=eq)
    assert res.comparison["delta_lambda2"] >= 0


def test_decomposition_additive_and_power_sign(base_market):
    p, mk, eq = base_market
    res = counterfactual(p, mk, CounterfactualScenario("raise", wage_women=1.3), baseline=eq)
    dec = bargaining_decomposition(p, mk, eq, res.equilibrium, res.prefs, res.market)
    for r, x, y in zip(dec.records, *np.unravel_index(np.arange(9), (3, 3))):
        assert r["direct_Q"] + r["power_Q"] == pytest.approx(r["total_Q"], abs=1e-10)
        assert r["direct_hw"] + r["power_hw"] == pytest.approx(r["total_hw"], abs=1e-10)
        if r["corner"]:
            continue
        A = p.A[mk.men[x].education]
        B = p.B[mk.women[y].education]
        expected = np.sign((r["lambda2_cf"] - r["lambda2_base"]) * (B - A))
        if abs(r["power_Q"]) > 1e-9:
            assert np.sign(r["power_Q"]) == expected


def test_scenario_parsing():
    s = CounterfactualScenario.from_dict({"wage_women": {"w1": 1.1}, "overrides": {"eta": 0.5}})
    assert s.wage_women == {"w1": 1.1}
    with pytest.raises(ValueError):
        CounterfactualScenario.from_dict({"wage_kids": 2})
    with pytest.raises(ValueError):
        CounterfactualScenario(wage_men=-1.0)


def test_identify_eta_ratio_identities():
    assert identify_eta([(2.0, 1.0, 0.25, 1.0)]).eta == pytest.approx(1 / 3)
    assert identify_eta([(10.0, 10.0, 5.0, 5.0)]).eta == pytest.approx(0.5)
    est = identify_eta([(10.0, 10.0, 5.0, 5.0), (10.0, 12.0, 0.0, 3.0)])
    assert est.excluded == 1


def test_identify_eta_simulated(rng):
    eta = 0.433
    wx, wy = rng.lognormal(3, 0.3, 500), rng.lognormal(2.7, 0.3, 500)
    ratio = eta / (1 - eta) * wy / wx  # h_a / h_b
    hb = rng.uniform(5, 20, 500)
    ha = ratio * hb * np.exp(rng.normal(0, 0.1, 500))
    assert identify_eta(zip(wx, wy, ha, hb)).eta == pytest.approx(eta, abs=0.01)
