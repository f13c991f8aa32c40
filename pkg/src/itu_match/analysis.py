"""Sharing rules, Lindahl prices, counterfactual equilibria and the
power-versus-direct decomposition of allocation changes.

Housework of each partner is a public input priced at that partner's wage.
Personal (Lindahl) prices split each wage between the partners in
proportion to their marginal willingness to pay in units of own private
consumption:

    P^{a,a} = A eta c_a / (a h_a),          P^{b,a} = B eta c_b / (b h_a),
    P^{a,b} = A (1 - eta) c_a / (a h_b),    P^{b,b} = B (1 - eta) c_b / (b h_b).

At an interior Pareto optimum ``P^{a,a} + P^{b,a} = w_x`` and
``P^{a,b} + P^{b,b} = w_y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distance import DistanceResult, weighted_welfare_solve
from .equilibrium import Equilibrium, Market, ipfp_solve
from .model import Allocation, PairContext, Preferences, TypeSpec

VARIANTS = ("corrected", "as-displayed")


@dataclass(frozen=True)
class LindahlPrices:
    P_aa: float
    P_ab: float
    P_ba: float
    P_bb: float
    corner: bool = False

    def adding_up(self, pair: PairContext) -> tuple[float, float]:
        """Residuals ``(P^{a,a} + P^{b,a} - w_x, P^{a,b} + P^{b,b} - w_y)``."""
        return self.P_aa + self.P_ba - pair.wage_man, self.P_ab + self.P_bb - pair.wage_woman


def _time_slack(pair: PairContext, alloc: Allocation, tol: float = 1e-7):
    T = pair.T
    return alloc.l_a + alloc.h_a < T * (1 - tol), alloc.l_b + alloc.h_b < T * (1 - tol)


def lindahl_prices(prefs: Preferences, pair: PairContext, alloc: Allocation) -> LindahlPrices:
    """Personal prices of the two housework inputs.

    When a time constraint binds the adding-up identity no longer holds at
    market wages; prices are still returned but flagged ``corner``.
    """
    ea, eb = pair.education_man, pair.education_woman
    a, A = prefs.a[ea], prefs.A[ea]
    b, B = prefs.b[eb], prefs.B[eb]
    eta = prefs.eta
    if min(alloc.c_a, alloc.c_b, alloc.h_a, alloc.h_b) <= 0:
        nan = math.nan
        return LindahlPrices(nan, nan, nan, nan, corner=True)
    slack_a, slack_b = _time_slack(pair, alloc)
    return LindahlPrices(
        P_aa=A * eta * alloc.c_a / (a * alloc.h_a),
        P_ab=A * (1 - eta) * alloc.c_a / (a * alloc.h_b),
        P_ba=B * eta * alloc.c_b / (b * alloc.h_a),
        P_bb=B * (1 - eta) * alloc.c_b / (b * alloc.h_b),
        corner=not (slack_a and slack_b),
    )


@dataclass(frozen=True)
class SharingRule:
    conditional: float
    unconditional: float
    man_share: float
    housework_share: float
    prices: LindahlPrices
    corner: bool


def sharing_rules(prefs: Preferences, pair: PairContext, result, variant: str = "corrected") -> SharingRule:
    """Woman's conditional and unconditional shares of household resources.

    ``result`` is a :class:`DistanceResult` or an :class:`Allocation`.
    The conditional rule values private goods only; the ``"as-displayed"``
    variant prices the man's leisure at the woman's wage, ``"corrected"`` at
    his own. The unconditional rule adds public inputs at Lindahl prices
    over full expenditure, so the man's and woman's shares sum to one.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    alloc = result.allocation if isinstance(result, DistanceResult) else result
    flags_corner = bool(result.corner) if isinstance(result, DistanceResult) else False
    wx, wy = pair.wage_man, pair.wage_woman
    w_leisure_a = wy if variant == "as-displayed" else wx
    priv_b = alloc.c_b + wy * alloc.l_b
    cond = priv_b / (alloc.c_a + w_leisure_a * alloc.l_a + priv_b)
    prices = lindahl_prices(prefs, pair, alloc)
    total = alloc.c_a + wx * (alloc.l_a + alloc.h_a) + alloc.c_b + wy * (alloc.l_b + alloc.h_b)
    woman = priv_b + prices.P_ba * alloc.h_a + prices.P_bb * alloc.h_b
    man = alloc.c_a + wx * alloc.l_a + prices.P_aa * alloc.h_a + prices.P_ab * alloc.h_b
    hw = alloc.h_a + alloc.h_b
    return SharingRule(
        conditional=cond, unconditional=woman / total, man_share=man / total,
        housework_share=alloc.h_b / hw if hw > 0 else math.nan, prices=prices,
        corner=flags_corner or prices.corner,
    )


# ---------------------------------------------------------------------------
# market-level reports


def weighted_summary(values, weights) -> dict:
    values, weights = np.asarray(values, float), np.asarray(weights, float)
    ok = np.isfinite(values) & (weights > 0)
    if not ok.any():
        return {"mean": math.nan, "q25": math.nan, "median": math.nan, "q75": math.nan, "n": 0}
    v, w = values[ok], weights[ok]
    q = np.quantile(v, [0.25, 0.5, 0.75], weights=w, method="inverted_cdf")
    return {"mean": float(np.average(v, weights=w)), "q25": float(q[0]), "median": float(q[1]),
            "q75": float(q[2]), "n": int(ok.sum())}


@dataclass
class SharingReport:
    records: list
    variant: str = "corrected"
    weighting: str = "mass"

    def _weights(self):
        if self.weighting == "pairs":
            return np.ones(len(self.records))
        return np.array([r["mu"] for r in self.records])

    def values(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.records], float)

    def mean(self, key, include_corners: bool = True) -> float:
        w = self._weights()
        if not include_corners:
            w = w * ~np.array([r["corner"] for r in self.records])
        return weighted_summary(self.values(key), w)["mean"]

    def rows(self) -> list[dict]:
        return [dict(r) for r in self.records]

    def summary(self) -> dict:
        w = self._weights()
        interior = w * ~np.array([r["corner"] for r in self.records], dtype=bool)
        return {
            "variant": self.variant, "weighting": self.weighting, "pairs": len(self.records),
            "corner_pairs": int(sum(r["corner"] for r in self.records)),
            "conditional": weighted_summary(self.values("S_cond"), w),
            # Lindahl-based statistics leave out corner pairs
            "unconditional": weighted_summary(self.values("S"), interior),
            "housework_share": weighted_summary(self.values("housework_share"), w),
            "lambda2": weighted_summary(self.values("lambda2"), w),
        }


def sharing_report(prefs: Preferences, market: Market, eq: Equilibrium, variant: str = "corrected",
                   weighting: str = "mass") -> SharingReport:
    """Per-pair sharing statistics at an equilibrium.

    ``weighting`` is ``"mass"`` (equilibrium couple masses) or ``"pairs"``
    (every ``(x, y)`` pair counts once).
    """
    if weighting not in ("mass", "pairs"):
        raise ValueError("weighting must be 'mass' or 'pairs'")
    X, Y = market.shape
    recs = []
    for x in range(X):
        for y in range(Y):
            pair = market.pair(prefs, x, y)
            r = eq.results[x][y]
            sr = sharing_rules(prefs, pair, r, variant)
            al = r.allocation
            recs.append({
                "man": market.men[x].id, "woman": market.women[y].id, "mu": float(eq.mu[x, y]),
                "S_cond": sr.conditional, "S": sr.unconditional, "housework_share": sr.housework_share,
                "lambda1": r.lambda1, "lambda2": r.lambda2,
                "P_aa": sr.prices.P_aa, "P_ab": sr.prices.P_ab, "P_ba": sr.prices.P_ba, "P_bb": sr.prices.P_bb,
                "c_a": al.c_a, "c_b": al.c_b, "l_a": al.l_a, "l_b": al.l_b, "h_a": al.h_a, "h_b": al.h_b,
                "Q": al.Q, "corner": bool(sr.corner),
                "time_a": bool(r.corner_flags.get("time_a", False)),
                "time_b": bool(r.corner_flags.get("time_b", False)),
            })
    return SharingReport(recs, variant, weighting)


# ---------------------------------------------------------------------------
# counterfactuals


def _per_type(spec, types, what):
    if spec is None:
        return [1.0] * len(types)
    if isinstance(spec, (int, float)):
        vals = [float(spec)] * len(types)
    else:
        unknown = set(spec) - {t.id for t in types}
        if unknown:
            raise ValueError(f"{what}: unknown type ids {sorted(unknown)}")
        vals = [float(spec.get(t.id, 1.0)) for t in types]
    if not all(v > 0 and math.isfinite(v) for v in vals):
        raise ValueError(f"{what} must be positive")
    return vals


@dataclass
class CounterfactualScenario:
    """Changes applied to a market.

    Multipliers are a number for a whole side or a mapping from type id to
    number; ``overrides`` replaces named model parameters (e.g. ``eta``).
    """

    description: str = ""
    wage_men: object = None
    wage_women: object = None
    mass_men: object = None
    mass_women: object = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("wage_men", "wage_women", "mass_men", "mass_women"):
            val = getattr(self, name)
            if isinstance(val, (int, float)) and not val > 0:
                raise ValueError(f"{name} must be positive")
            if isinstance(val, dict) and not all(v > 0 for v in val.values()):
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CounterfactualScenario":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "CounterfactualScenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def apply(self, prefs, market: Market):
        def scaled(types, wages, masses):
            out = []
            for t, fw, fm in zip(types, wages, masses):
                out.append(TypeSpec(t.id, t.mass * fm, None if t.wage is None else t.wage * fw, t.education, t.age))
            return out

        men = scaled(market.men, _per_type(self.wage_men, market.men, "wage_men"),
                     _per_type(self.mass_men, market.men, "mass_men"))
        women = scaled(market.women, _per_type(self.wage_women, market.women, "wage_women"),
                       _per_type(self.mass_women, market.women, "mass_women"))
        new_prefs = prefs
        if self.overrides:
            if not isinstance(prefs, Preferences):
                raise ValueError("parameter overrides need a home-production model")
            d = prefs.to_dict()
            for k, v in self.overrides.items():
                if k not in d:
                    raise ValueError(f"unknown parameter {k!r}")
                d[k] = v
            new_prefs = Preferences.from_dict(d)
        return new_prefs, Market(men, women, market.T, market.family, new_prefs, dict(market.options))


@dataclass
class CounterfactualResult:
    equilibrium: Equilibrium
    report: SharingReport | None
    baseline_report: SharingReport
    prefs: object
    market: Market
    comparison: dict
    status: str

    def rows(self) -> list[dict]:
        out = []
        for b, c in zip(self.baseline_report.records, self.report.records if self.report else []):
            out.append({
                "man": b["man"], "woman": b["woman"], "mu_base": b["mu"], "mu_cf": c["mu"],
                "S_base": b["S"], "S_cf": c["S"], "dS": c["S"] - b["S"],
                "housework_share_base": b["housework_share"], "housework_share_cf": c["housework_share"],
                "lambda2_base": b["lambda2"], "lambda2_cf": c["lambda2"], "corner": b["corner"] or c["corner"],
            })
        return out

    def summary(self) -> dict:
        return {"status": self.status, **self.comparison}


def counterfactual(prefs, market: Market, scenario: CounterfactualScenario, baseline: Equilibrium | None = None,
                   variant: str = "corrected", weighting: str = "mass", tol: float = 1e-10) -> CounterfactualResult:
    """Re-solve the market under ``scenario`` and compare with the baseline."""
    if baseline is None:
        baseline = ipfp_solve(prefs, market, tol=tol)
    base_rep = sharing_report(prefs, market, baseline, variant, weighting)
    cf_prefs, cf_market = scenario.apply(prefs, market)
    try:
        eq = ipfp_solve(cf_prefs, cf_market, tol=tol, init=baseline)
    except Exception as exc:  # noqa: BLE001 - report failure with what we have
        return CounterfactualResult(None, None, base_rep, cf_prefs, cf_market,
                                    {"error": str(exc)}, "failed")
    rep = sharing_report(cf_prefs, cf_market, eq, variant, weighting)

    def delta(key):
        return rep.mean(key) - base_rep.mean(key)

    comparison = {
        "description": scenario.description,
        "mean_S": {"base": base_rep.mean("S", False), "cf": rep.mean("S", False)},
        "mean_S_cond": {"base": base_rep.mean("S_cond"), "cf": rep.mean("S_cond")},
        "mean_housework_share": {"base": base_rep.mean("housework_share"), "cf": rep.mean("housework_share")},
        "mean_lambda2": {"base": base_rep.mean("lambda2"), "cf": rep.mean("lambda2")},
        "married_mass": {"base": float(baseline.mu.sum()), "cf": float(eq.mu.sum())},
        "delta_S_cond": delta("S_cond"), "delta_housework_share": delta("housework_share"),
        "delta_lambda2": delta("lambda2"),
    }
    comparison["delta_S"] = comparison["mean_S"]["cf"] - comparison["mean_S"]["base"]
    return CounterfactualResult(eq, rep, base_rep, cf_prefs, cf_market, comparison, eq.status)


# ---------------------------------------------------------------------------
# decomposition


@dataclass
class Decomposition:
    records: list

    def rows(self):
        return [dict(r) for r in self.records]

    def summary(self):
        keys = ("total_Q", "power_Q", "direct_Q", "total_hw", "power_hw", "direct_hw")
        return {k: float(np.mean([r[k] for r in self.records])) for k in keys}


def _clip_weight(lam):
    return min(max(lam, 1e-12), 1 - 1e-12)


def bargaining_decomposition(prefs, market: Market, base_eq: Equilibrium, cf_eq: Equilibrium,
                             cf_prefs=None, cf_market: Market | None = None) -> Decomposition:
    """Split each pair's allocation change into a power and a direct effect.

    The power effect re-solves the baseline household problem (baseline
    wages and preferences) with the counterfactual Pareto weight; the direct
    effect is the rest of the total change. Reported on public-good output
    ``Q`` and on the woman's housework share.
    """
    cf_prefs = prefs if cf_prefs is None else cf_prefs
    cf_market = market if cf_market is None else cf_market
    if not (base_eq.converged and cf_eq.converged):
        raise ValueError("both equilibria must be converged")
    X, Y = market.shape
    recs = []
    for x in range(X):
        for y in range(Y):
            pb = market.pair(prefs, x, y)
            pc = cf_market.pair(cf_prefs, x, y)
            lb = _clip_weight(base_eq.results[x][y].lambda1)
            lc = _clip_weight(cf_eq.results[x][y].lambda1)
            a0 = weighted_welfare_solve(prefs, pb, lb)
            a1 = a0 if lc == lb else weighted_welfare_solve(prefs, pb, lc)
            a2 = a0 if (lc == lb and pc == pb and cf_prefs == prefs) else weighted_welfare_solve(cf_prefs, pc, lc)

            def hw(al):
                return al.h_b / (al.h_a + al.h_b)

            total_q, power_q = a2.Q - a0.Q, a1.Q - a0.Q
            total_hw, power_hw = hw(a2) - hw(a0), hw(a1) - hw(a0)
            recs.append({
                "man": market.men[x].id, "woman": market.women[y].id,
                "lambda2_base": 1 - lb, "lambda2_cf": 1 - lc,
                "Q_base": a0.Q, "Q_power": a1.Q, "Q_cf": a2.Q,
                "total_Q": total_q, "power_Q": power_q, "direct_Q": total_q - power_q,
                "total_hw": total_hw, "power_hw": power_hw, "direct_hw": total_hw - power_hw,
                "corner": bool(base_eq.results[x][y].corner or cf_eq.results[x][y].corner),
            })
    return Decomposition(recs)


# ---------------------------------------------------------------------------
# eta from housework ratios


@dataclass
class EtaEstimate:
    eta: float
    implied: np.ndarray
    excluded: int


def identify_eta(couples) -> EtaEstimate:
    """Median over couples of ``eta`` implied by ``eta/(1-eta) = (w_x/w_y)(h_a/h_b)``.

    ``couples`` holds ``(w_x, w_y, h_a, h_b)`` tuples; couples with zero or
    missing housework are left out and counted in ``excluded``.
    """
    implied, excluded = [], 0
    for wx, wy, ha, hb in couples:
        if not (wx > 0 and wy > 0):
            raise ValueError("wages must be positive")
        if not (ha is not None and hb is not None and ha > 0 and hb > 0):
            excluded += 1
            continue
        r = (wx / wy) * (ha / hb)
        implied.append(r / (1 + r))
    if not implied:
        raise ValueError("no couple with positive housework for both partners")
    implied = np.array(implied)
    return EtaEstimate(float(np.median(implied)), implied, excluded)
