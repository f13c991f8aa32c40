"""Maximum likelihood under equilibrium constraints.

The sample log-likelihood of a matched pair ``(x, y)`` is ``-D_xy(u_x, v_y)``,
of a single man ``-u_x`` and of a single woman ``-v_y``; hours of leisure and
housework add Gaussian measurement-error terms and the total is normalised
by ``-N_hat log N``. Measurement-error scales are concentrated out in closed
form. Parameters are estimated either jointly with ``(u, v)`` subject to the
market-clearing equations (MPEC) or by re-solving the equilibrium at every
parameter value (nested).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nlp
from .equilibrium import EquilibriumError, Market, _solve, ipfp_solve, pair_problems
from .model import T_DEFAULT, DomainError, Preferences, TransferableUtility, TypeSpec, pair_problem, solve_single

log = logging.getLogger(__name__)

KINDS = ("couple", "single_m", "single_f")
SIGMA_FLOOR = 1e-8
HOUR_FIELDS = ("l_a", "l_b", "h_a", "h_b")


class LikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class HouseholdRecord:
    """One observed household. Hours are weekly hours of market work and housework."""

    kind: str
    man_type: str | None = None
    woman_type: str | None = None
    wage_man: float | None = None
    wage_woman: float | None = None
    work_man: float | None = None
    work_woman: float | None = None
    housework_man: float | None = None
    housework_woman: float | None = None
    education_man: int | None = None
    education_woman: int | None = None
    age_man: float | None = None
    age_woman: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown household kind {self.kind!r}")

    @property
    def has_man(self) -> bool:
        return self.kind in ("couple", "single_m")

    @property
    def has_woman(self) -> bool:
        return self.kind in ("couple", "single_f")

    def observed_hours(self, T: float) -> np.ndarray:
        """``(l_a, l_b, h_a, h_b)`` with NaN for an absent partner."""
        out = np.full(4, np.nan)
        if self.has_man and self.work_man is not None and self.housework_man is not None:
            out[0] = T - self.work_man - self.housework_man
            out[2] = self.housework_man
        if self.has_woman and self.work_woman is not None and self.housework_woman is not None:
            out[1] = T - self.work_woman - self.housework_woman
            out[3] = self.housework_woman
        return out


@dataclass
class Dataset:
    records: list
    T: float = T_DEFAULT

    def __post_init__(self):
        self.records = list(self.records)
        for i, r in enumerate(self.records):
            for w, present in ((r.wage_man, r.has_man), (r.wage_woman, r.has_woman)):
                if present and w is not None and not w > 0:
                    raise ValueError(f"record {i}: wages must be positive")
            for h in (r.work_man, r.work_woman, r.housework_man, r.housework_woman):
                if h is not None and not 0 <= h <= self.T:
                    raise ValueError(f"record {i}: hours {h} outside [0, {self.T}]")

    def of_kind(self, kind):
        return [r for r in self.records if r.kind == kind]

    @property
    def n_couples(self) -> int:
        return sum(r.kind == "couple" for r in self.records)

    @property
    def n_men(self) -> int:
        return sum(r.has_man for r in self.records)

    @property
    def n_women(self) -> int:
        return sum(r.has_woman for r in self.records)

    @property
    def n_households(self) -> int:
        return len(self.records)

    def observed_hours(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, 4))
        return np.array([r.observed_hours(self.T) for r in self.records])


def market_from_dataset(data: Dataset) -> tuple[Market, Dataset]:
    """Every observed individual becomes its own type with unit mass."""
    men, women, recs = [], [], []
    for r in data.records:
        mid = wid = None
        if r.has_man:
            mid = f"M{len(men)}"
            men.append(TypeSpec(mid, 1.0, r.wage_man, r.education_man or 0, r.age_man))
        if r.has_woman:
            wid = f"F{len(women)}"
            women.append(TypeSpec(wid, 1.0, r.wage_woman, r.education_woman or 0, r.age_woman))
        recs.append(replace(r, man_type=mid, woman_type=wid))
    return Market(men, women, data.T), Dataset(recs, data.T)


# ---------------------------------------------------------------------------
# index bookkeeping shared by the likelihood and the estimators


class _Layout:
    def __init__(self, data: Dataset, market: Market):
        self.data, self.market = data, market
        mx = {t.id: i for i, t in enumerate(market.men)}
        wy = {t.id: i for i, t in enumerate(market.women)}
        X, Y = market.shape
        self.xi = np.full(len(data.records), -1)
        self.yi = np.full(len(data.records), -1)
        for k, r in enumerate(data.records):
            try:
                if r.has_man:
                    self.xi[k] = mx[r.man_type]
                if r.has_woman:
                    self.yi[k] = wy[r.woman_type]
            except KeyError as exc:
                raise LikelihoodError(f"record {k} references unknown type {exc.args[0]!r}") from None
        kinds = np.array([r.kind for r in data.records])
        self.couple = kinds == "couple"
        self.single_m = kinds == "single_m"
        self.single_f = kinds == "single_f"
        self.cells = sorted({(int(x), int(y)) for x, y in zip(self.xi[self.couple], self.yi[self.couple])})
        self.cell_count = {c: 0 for c in self.cells}
        for x, y in zip(self.xi[self.couple], self.yi[self.couple]):
            self.cell_count[(int(x), int(y))] += 1
        self.single_men_count = np.bincount(self.xi[self.single_m], minlength=X) if X else np.zeros(0)
        self.single_women_count = np.bincount(self.yi[self.single_f], minlength=Y) if Y else np.zeros(0)
        self.obs = data.observed_hours()
        # counts normalising s1..s4
        self.counts = np.array([data.n_men, data.n_women, data.n_couples, data.n_couples], float)


def _single_hours(prefs, t: TypeSpec, T: float, woman: bool) -> np.ndarray:
    s = solve_single(prefs, t.wage, t.education, T, woman=woman)
    return np.array([s.l, s.h])


def _predictions(prefs, lay: _Layout, results) -> np.ndarray:
    """Predicted ``(l_a, l_b, h_a, h_b)`` for every record (NaN where absent)."""
    mk = lay.market
    pred = np.full((len(lay.data.records), 4), np.nan)
    if not isinstance(prefs, Preferences):
        return pred
    problems = {}
    for k in np.flatnonzero(lay.couple):
        x, y = int(lay.xi[k]), int(lay.yi[k])
        r = results[(x, y)]
        prob = problems.get((x, y))
        if prob is None:
            prob = problems[(x, y)] = pair_problems_cell(prefs, mk, x, y)
        pred[k] = prob.hours(r.y)
    for k in np.flatnonzero(lay.single_m):
        l, h = _single_hours(prefs, mk.men[lay.xi[k]], mk.T, False)
        pred[k, 0], pred[k, 2] = l, h
    for k in np.flatnonzero(lay.single_f):
        l, h = _single_hours(prefs, mk.women[lay.yi[k]], mk.T, True)
        pred[k, 1], pred[k, 3] = l, h
    return pred


def pair_problems_cell(prefs, market: Market, x: int, y: int):
    if isinstance(prefs, Preferences):
        return pair_problem(prefs, market.pair(prefs, x, y))
    if isinstance(prefs, TransferableUtility):
        phi = np.asarray(prefs.phi)
        return pair_problem(float(phi[0, 0] if phi.shape == (1, 1) else phi[x, y]))
    return pair_problem(prefs)


# ---------------------------------------------------------------------------
# measurement-error scales


@dataclass
class SigmaEstimate:
    s: np.ndarray
    floored: tuple = ()

    def __iter__(self):
        return iter(self.s)


def _residual_sums(obs, pred):
    r = pred - obs
    # s1: men's leisure, s2: women's leisure, s3: men's housework, s4: women's housework
    return np.array([np.nansum(r[:, k] ** 2) for k in range(4)])


def sigma_closed_form(data: Dataset, predictions, counts=None) -> SigmaEstimate:
    """Maximisers of the likelihood in ``s_1..s_4`` for fixed predictions.

    ``s_k^2 = sum of squared residuals / count_k`` with counts
    ``(|I|, |J|, |C|, |C|)``. Values below ``1e-8`` are floored and flagged.
    """
    pred = np.asarray(predictions, float)
    obs = data.observed_hours()
    if pred.shape != obs.shape:
        raise ValueError(f"predictions have shape {pred.shape}, expected {obs.shape}")
    counts = np.array([data.n_men, data.n_women, data.n_couples, data.n_couples], float) \
        if counts is None else np.asarray(counts, float)
    ss = _residual_sums(obs, pred)
    s = np.empty(4)
    floored = []
    for k in range(4):
        val = math.sqrt(ss[k] / counts[k]) if counts[k] > 0 else 0.0
        if val < SIGMA_FLOOR:
            val = SIGMA_FLOOR
            floored.append(HOUR_FIELDS[k])
        s[k] = val
    return SigmaEstimate(s, tuple(floored))


# ---------------------------------------------------------------------------
# likelihood


@dataclass
class LikelihoodParts:
    total: float
    matching: float
    hours: float
    scale: float
    normalisation: float
    sigma: np.ndarray
    N: float
    N_hat: float
    predictions: np.ndarray
    sigma_floored: tuple = ()


def _solve_cells(problems, cells, u, v, starts=None):
    out = {}
    for (x, y) in cells:
        st = None if starts is None else starts.get((x, y))
        out[(x, y)] = _solve(problems[x][y], u[x], v[y], st, x, y)
    return out


def _loglik_from(prefs, lay, u, v, results, sigma, N, N_hat) -> LikelihoodParts:
    data = lay.data
    D = 0.0
    for k in np.flatnonzero(lay.couple):
        z = results[(int(lay.xi[k]), int(lay.yi[k]))].z_star
        if not math.isfinite(z):
            raise LikelihoodError(f"record {k}: non-finite distance")
        D += z
    matching = -D - float(u[lay.xi[lay.single_m]].sum()) - float(v[lay.yi[lay.single_f]].sum())
    pred = _predictions(prefs, lay, results)
    hours = scale = 0.0
    floored = ()
    s = np.full(4, np.nan)
    if isinstance(prefs, Preferences):
        if sigma is None:
            est = sigma_closed_form(data, pred, lay.counts)
            s, floored = est.s, est.floored
        else:
            s = np.asarray(sigma, float)
            if np.any(s <= 0):
                raise LikelihoodError("measurement-error scales must be positive")
        ss = _residual_sums(lay.obs, pred)
        if not np.all(np.isfinite(ss)):
            bad = np.flatnonzero(~np.isfinite(pred - lay.obs).all(axis=1) & np.isfinite(lay.obs).all(axis=1))
            raise LikelihoodError(f"non-finite hour residual in records {bad.tolist()[:5]}")
        hours = -0.5 * float((ss / s ** 2).sum())
        scale = -float((lay.counts * np.log(s)).sum())
    norm = -N_hat * math.log(N)
    total = matching + hours + scale + norm
    if not math.isfinite(total):
        raise LikelihoodError("non-finite log-likelihood")
    return LikelihoodParts(total, matching, hours, scale, norm, s, N, N_hat, pred, floored)


def total_mass(problems, u, v, results=None) -> float:
    """Predicted number of households ``sum mu_xy + sum mu_x0 + sum mu_0y``."""
    X, Y = len(u), len(v)
    tot = float(np.exp(-np.asarray(u)).sum() + np.exp(-np.asarray(v)).sum())
    for x in range(X):
        for y in range(Y):
            r = results.get((x, y)) if results is not None else None
            if r is None:
                r = _solve(problems[x][y], u[x], v[y], None, x, y)
            tot += math.exp(-r.z_star)
    return tot


def log_likelihood(prefs, data: Dataset, u, v, market: Market | None = None, sigma=None,
                   N: float | None = None, N_hat: float | None = None, return_parts: bool = False):
    """Sample log-likelihood at payoffs ``(u, v)`` indexed by the market's types.

    Without ``market`` every individual is its own unit-mass type. ``sigma``
    defaults to the closed-form maximiser; ``N`` to the model's total
    household mass and ``N_hat`` to the number of records.
    """
    if market is None:
        market, data = market_from_dataset(data)
    u, v = np.asarray(u, float), np.asarray(v, float)
    if u.shape != (len(market.men),) or v.shape != (len(market.women),):
        raise ValueError("payoff vectors do not match the market")
    lay = _Layout(data, market)
    problems = pair_problems(prefs, market)
    results = _solve_cells(problems, lay.cells, u, v)
    if N is None:
        N = total_mass(problems, u, v, results)
    N_hat = data.n_households if N_hat is None else N_hat
    parts = _loglik_from(prefs, lay, u, v, results, sigma, N, N_hat)
    return parts if return_parts else parts.total


# ---------------------------------------------------------------------------
# model families


class ModelFamily:
    """Maps a vector of free parameters to a model, the rest held at ``base``.

    ``base`` is a :class:`Preferences` (home production) or a
    :class:`TransferableUtility` whose surplus matrix entries are the
    parameters ``phi[x,y]``.
    """

    EPS = 1e-4

    def __init__(self, base, free=None):
        self.base = base
        if isinstance(base, Preferences):
            self.all_names = base.theta_names()
            self.full = base.to_theta()
        elif isinstance(base, TransferableUtility):
            phi = np.asarray(base.phi)
            self.shape = phi.shape
            self.all_names = [f"phi[{i},{j}]" for i in range(phi.shape[0]) for j in range(phi.shape[1])]
            self.full = phi.ravel().astype(float)
        else:
            raise TypeError(f"cannot estimate a {type(base).__name__} model")
        free = list(self.all_names if free is None else free)
        unknown = [f for f in free if f not in self.all_names]
        if unknown:
            raise ValueError(f"unknown parameters {unknown}; known: {self.all_names}")
        self.names = free
        self.idx = np.array([self.all_names.index(f) for f in free], dtype=int)

    @property
    def kind(self) -> str:
        return "home_production" if isinstance(self.base, Preferences) else "tu"

    def theta0(self) -> np.ndarray:
        return self.full[self.idx].copy()

    def full_theta(self, theta) -> np.ndarray:
        full = self.full.copy()
        full[self.idx] = theta
        return full

    def build(self, theta):
        full = self.full_theta(theta)
        if isinstance(self.base, Preferences):
            return self.base.with_theta(full)
        return TransferableUtility(full.reshape(self.shape))

    def pair_grads(self, prob, result, x, y):
        """``(dU, dV)`` with respect to the free parameters."""
        if isinstance(self.base, Preferences):
            dU, dV = prob.theta_grads(result.y)
            return dU[self.idx], dV[self.idx]
        g = np.zeros(len(self.full))
        g[0 if self.shape == (1, 1) else x * self.shape[1] + y] = 0.5
        return g[self.idx], g[self.idx]

    def inequalities(self):
        """Linear constraints ``G theta <= h`` keeping the model valid."""
        rows, rhs = [], []
        if not isinstance(self.base, Preferences):
            return np.zeros((0, len(self.idx))), np.zeros(0)
        pos = {n: i for i, n in enumerate(self.names)}
        k = self.base.n_classes
        groups = [(f"a[{e}]", f"alpha[{e}]") for e in range(k)] + [(f"b[{e}]", f"beta[{e}]") for e in range(k)]
        for name in self.names:
            if name.startswith(("a[", "alpha[", "b[", "beta[", "eta")):
                r = np.zeros(len(self.names))
                r[pos[name]] = -1.0
                rows.append(r)
                rhs.append(-self.EPS)
        if "eta" in pos:
            r = np.zeros(len(self.names))
            r[pos["eta"]] = 1.0
            rows.append(r)
            rhs.append(1 - self.EPS)
        full = dict(zip(self.all_names, self.full))
        for p, q in groups:
            if p in pos or q in pos:
                r = np.zeros(len(self.names))
                const = 0.0
                for name in (p, q):
                    if name in pos:
                        r[pos[name]] = 1.0
                    else:
                        const += full[name]
                rows.append(r)
                rhs.append(1 - self.EPS - const)
        return np.array(rows), np.array(rhs)


# ---------------------------------------------------------------------------
# objective, clearing constraints and their derivatives


@dataclass
class _Point:
    theta: np.ndarray
    u: np.ndarray
    v: np.ndarray
    prefs: object
    problems: list
    results: dict
    mu: np.ndarray
    parts: LikelihoodParts
    G: np.ndarray


class _Objective:
    def __init__(self, family: ModelFamily, data: Dataset, market: Market, fd_step: float = 1e-6):
        self.family, self.data, self.market = family, data, market
        self.lay = _Layout(data, market)
        self.N_hat = float(data.n_households)
        self.h = fd_step
        self.X, self.Y = market.shape
        self.K = len(family.names)

    def point(self, theta, u, v, starts=None) -> _Point:
        prefs = self.family.build(theta)
        problems = pair_problems(prefs, self.market)
        cells = [(x, y) for x in range(self.X) for y in range(self.Y)]
        results = _solve_cells(problems, cells, u, v, starts)
        mu = np.array([[math.exp(-results[(x, y)].z_star) for y in range(self.Y)] for x in range(self.X)])
        N = float(mu.sum() + np.exp(-u).sum() + np.exp(-v).sum())
        parts = _loglik_from(prefs, self.lay, u, v, results, None, N, self.N_hat)
        n, m = self.market.n, self.market.m
        G = np.concatenate([(np.exp(-u) + mu.sum(axis=1) - n) / n, (np.exp(-v) + mu.sum(axis=0) - m) / m])
        return _Point(np.array(theta, float), u, v, prefs, problems, results, mu, parts, G)

    def derivatives(self, pt: _Point) -> dict:
        fam, lay, mk = self.family, self.lay, self.market
        X, Y, K, h = self.X, self.Y, self.K, self.h
        l1 = np.array([[pt.results[(x, y)].lambda1 for y in range(Y)] for x in range(X)])
        l2 = np.array([[pt.results[(x, y)].lambda2 for y in range(Y)] for x in range(X)])
        dD = np.zeros((X, Y, K))
        for x in range(X):
            for y in range(Y):
                r = pt.results[(x, y)]
                dU, dV = fam.pair_grads(pt.problems[x][y], r, x, y)
                dD[x, y] = -(r.lambda1 * dU + r.lambda2 * dV)
        out = {"l1": l1, "l2": l2, "dD": dD, "cell_dpred": {}, "man_dpred": {}, "woman_dpred": {}}
        if not isinstance(pt.prefs, Preferences):
            return out
        plus = [fam.build(pt.theta + h * e) for e in np.eye(K)]
        minus = [fam.build(pt.theta - h * e) for e in np.eye(K)]

        def hours(prefs, x, y, u, v, start):
            prob = pair_problems_cell(prefs, mk, x, y)
            return prob.hours(_solve(prob, u, v, start, x, y).y)

        for (x, y) in lay.cells:
            r = pt.results[(x, y)]
            u, v = pt.u[x], pt.v[y]
            J = np.empty((4, K + 2))
            for j in range(K):
                J[:, j] = (hours(plus[j], x, y, u, v, r) - hours(minus[j], x, y, u, v, r)) / (2 * h)
            J[:, K] = (hours(pt.prefs, x, y, u + h, v, r) - hours(pt.prefs, x, y, u - h, v, r)) / (2 * h)
            J[:, K + 1] = (hours(pt.prefs, x, y, u, v + h, r) - hours(pt.prefs, x, y, u, v - h, r)) / (2 * h)
            out["cell_dpred"][(x, y)] = J
        for x in np.unique(lay.xi[lay.single_m]):
            t = mk.men[x]
            out["man_dpred"][int(x)] = np.array([
                (_single_hours(plus[j], t, mk.T, False) - _single_hours(minus[j], t, mk.T, False)) / (2 * h)
                for j in range(K)]).T
        for y in np.unique(lay.yi[lay.single_f]):
            t = mk.women[y]
            out["woman_dpred"][int(y)] = np.array([
                (_single_hours(plus[j], t, mk.T, True) - _single_hours(minus[j], t, mk.T, True)) / (2 * h)
                for j in range(K)]).T
        return out

    def record_scores(self, pt: _Point, der: dict) -> np.ndarray:
        """Per-record partial derivatives of the log-likelihood in ``(theta, u, v)``.

        The ``-N_hat log N`` term is shared equally, one ``-log N`` per record;
        measurement-error scales are held at their concentrated values.
        """
        lay, X, Y, K = self.lay, self.X, self.Y, self.K
        R = len(lay.data.records)
        S = np.zeros((R, K + X + Y))
        mu, l1, l2, dD = pt.mu, der["l1"], der["l2"], der["dD"]
        N = pt.parts.N
        dN = np.concatenate([
            (mu[:, :, None] * -dD).sum(axis=(0, 1)),
            -np.exp(-pt.u) - (l1 * mu).sum(axis=1),
            -np.exp(-pt.v) - (l2 * mu).sum(axis=0),
        ])
        S -= dN / N
        hours_model = isinstance(pt.prefs, Preferences)
        if hours_model:
            s2 = pt.parts.sigma ** 2
            err = (pt.parts.predictions - lay.obs) / s2
        for k in range(R):
            x, y = int(lay.xi[k]), int(lay.yi[k])
            if lay.couple[k]:
                S[k, :K] -= dD[x, y]
                S[k, K + x] -= l1[x, y]
                S[k, K + X + y] -= l2[x, y]
                if hours_model:
                    g = -err[k] @ der["cell_dpred"][(x, y)]
                    S[k, :K] += g[:K]
                    S[k, K + x] += g[K]
                    S[k, K + X + y] += g[K + 1]
            elif lay.single_m[k]:
                S[k, K + x] -= 1.0
                if hours_model:
                    S[k, :K] -= err[k, [0, 2]] @ der["man_dpred"][x]
            else:
                S[k, K + X + y] -= 1.0
                if hours_model:
                    S[k, :K] -= err[k, [1, 3]] @ der["woman_dpred"][y]
        return S

    def gradient(self, pt: _Point, der: dict) -> np.ndarray:
        """Gradient of the log-likelihood in ``(theta, u, v)``."""
        return self.record_scores(pt, der).sum(axis=0)

    def clearing_jacobian(self, pt: _Point, der: dict) -> np.ndarray:
        X, Y, K = self.X, self.Y, self.K
        mu, l1, l2, dD = pt.mu, der["l1"], der["l2"], der["dD"]
        n, m = self.market.n, self.market.m
        J = np.zeros((X + Y, K + X + Y))
        J[:X, :K] = -(mu[:, :, None] * dD).sum(axis=1)
        J[X:, :K] = -(mu[:, :, None] * dD).sum(axis=0)
        J[:X, K:K + X] = np.diag(-np.exp(-pt.u) - (l1 * mu).sum(axis=1))
        J[:X, K + X:] = -l2 * mu
        J[X:, K:K + X] = (-l1 * mu).T
        J[X:, K + X:] = np.diag(-np.exp(-pt.v) - (l2 * mu).sum(axis=0))
        J[:X] /= n[:, None]
        J[X:] /= m[:, None]
        return J


# ---------------------------------------------------------------------------
# results


@dataclass
class EstimateResult:
    theta: np.ndarray
    names: list
    prefs: object
    u: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    log_likelihood: float
    status: str
    method: str
    iterations: int = 0
    kkt_residual: float = math.nan
    equilibrium_residual: float = math.nan
    std_errors: np.ndarray = None
    flags: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == nlp.CONVERGED

    def as_dict(self) -> dict:
        se = self.std_errors if self.std_errors is not None else np.full(len(self.theta), math.nan)
        return {
            "method": self.method, "status": self.status, "iterations": self.iterations,
            "log_likelihood": self.log_likelihood, "kkt_residual": self.kkt_residual,
            "equilibrium_residual": self.equilibrium_residual,
            "theta": {n: float(t) for n, t in zip(self.names, self.theta)},
            "std_errors": {n: float(s) for n, s in zip(self.names, se)},
            "sigma": [float(s) for s in self.sigma], "u": self.u.tolist(), "v": self.v.tolist(),
            "flags": self.flags,
        }


def _total_scores(obj: _Objective, pt: _Point, der: dict) -> np.ndarray:
    """Per-record scores in ``theta`` along the equilibrium manifold."""
    K = obj.K
    S = obj.record_scores(pt, der)
    J = obj.clearing_jacobian(pt, der)
    dw = -np.linalg.solve(J[:, K:], J[:, :K])
    return S[:, :K] + S[:, K:] @ dw


def _opg(scores: np.ndarray) -> np.ndarray:
    info = scores.T @ scores
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    return np.sqrt(np.clip(np.diag(cov), 0, None))


def _finish(obj, pt, method, status, iterations, kkt, flags) -> EstimateResult:
    der = obj.derivatives(pt)
    try:
        se = _opg(_total_scores(obj, pt, der))
    except np.linalg.LinAlgError:
        se = np.full(obj.K, math.nan)
        flags["std_errors"] = "singular clearing Jacobian"
    resid = float(np.abs(pt.G).max())
    return EstimateResult(
        theta=pt.theta.copy(), names=list(obj.family.names), prefs=pt.prefs, u=pt.u.copy(), v=pt.v.copy(),
        sigma=pt.parts.sigma, log_likelihood=pt.parts.total, status=status, method=method,
        iterations=iterations, kkt_residual=kkt, equilibrium_residual=resid, std_errors=se, flags=flags,
    )


_EVAL_ERRORS = (EquilibriumError, DomainError, LikelihoodError, ValueError, FloatingPointError,
                np.linalg.LinAlgError)


def _as_family(model, free) -> ModelFamily:
    return model if isinstance(model, ModelFamily) else ModelFamily(model, free)


def estimate_mpec(model, data: Dataset, theta0=None, market: Market | None = None, free=None,
                  tol: float = 1e-7, max_iter: int = 500, eq_tol: float = 1e-6) -> EstimateResult:
    """Maximise the likelihood jointly over ``(theta, u, v)`` under market clearing.

    ``model`` is a :class:`ModelFamily` or a base model plus ``free`` names.
    The start ``(u, v)`` is the equilibrium at ``theta0``.
    """
    fam = _as_family(model, free)
    if market is None:
        market, data = market_from_dataset(data)
    obj = _Objective(fam, data, market)
    theta0 = fam.theta0() if theta0 is None else np.asarray(theta0, float)
    K, X, Y = obj.K, obj.X, obj.Y
    eq0 = ipfp_solve(fam.build(theta0), market)
    z0 = np.concatenate([theta0, eq0.u, eq0.v])
    cache = {}

    def at(z):
        key = z.tobytes()
        if key not in cache:
            if len(cache) > 64:
                cache.clear()
            try:
                cache[key] = [obj.point(z[:K], z[K:K + X], z[K + X:]), None]
            except _EVAL_ERRORS as exc:
                log.debug("evaluation failed: %s", exc)
                cache[key] = [None, None]
        return cache[key]

    def der(z):
        ent = at(z)
        if ent[1] is None and ent[0] is not None:
            ent[1] = obj.derivatives(ent[0])
        return ent[1]

    def f(z):
        pt = at(z)[0]
        return math.inf if pt is None else -pt.parts.total / obj.N_hat

    def grad(z):
        pt = at(z)[0]
        log.debug("mpec: f %.10g  clearing %.2e", -pt.parts.total / obj.N_hat, np.abs(pt.G).max())
        return -obj.gradient(pt, der(z)) / obj.N_hat

    def ceq(z):
        pt = at(z)[0]
        return np.full(X + Y, np.nan) if pt is None else pt.G

    def ceq_jac(z):
        return obj.clearing_jacobian(at(z)[0], der(z))

    Gi, hi = fam.inequalities()
    pad = np.zeros((len(hi), X + Y))
    prob = nlp.NlpProblem(
        n=K + X + Y, objective=f, gradient=grad, x0=z0, eq=ceq, eq_jac=ceq_jac,
        ineq=(lambda z: Gi @ z[:K] - hi) if len(hi) else None,
        ineq_jac=(lambda z: np.hstack([Gi, pad])) if len(hi) else None,
    )
    sol = nlp.minimize(prob, tol=tol, max_iter=max_iter)
    pt = at(sol.x)[0]
    if pt is None:
        pt = obj.point(theta0, eq0.u, eq0.v)
    status = sol.status
    flags = {}
    if np.abs(pt.G).max() > eq_tol:
        status = "constraint_violation"
        flags["equilibrium_residual"] = float(np.abs(pt.G).max())
    return _finish(obj, pt, "mpec", status, sol.iterations, sol.kkt_residual, flags)


def estimate_nested(model, data: Dataset, theta0=None, market: Market | None = None, free=None,
                    tol: float = 1e-7, max_iter: int = 300, ipfp_tol: float = 1e-12,
                    max_step: float = 0.25) -> EstimateResult:
    """Maximise the likelihood over ``theta`` with the equilibrium re-solved each time.

    The outer step is quasi-Newton; gradients follow from the implicit
    function theorem applied to the clearing equations. Parameter values
    where the inner solve fails get an infinite objective and are counted
    in ``flags["inner_failures"]``. Each outer step moves ``theta`` by at
    most ``max_step`` per coordinate, since a wild trial costs a full
    equilibrium solve.
    """
    fam = _as_family(model, free)
    if market is None:
        market, data = market_from_dataset(data)
    obj = _Objective(fam, data, market)
    theta0 = fam.theta0() if theta0 is None else np.asarray(theta0, float)
    K = obj.K
    state = {"eq": None, "failures": 0}
    cache = {}

    def at(theta):
        key = theta.tobytes()
        if key not in cache:
            if len(cache) > 64:
                cache.clear()
            try:
                prefs = fam.build(theta)
                eq = ipfp_solve(prefs, market, tol=ipfp_tol, init=state["eq"])
                if not eq.converged:
                    raise EquilibriumError(f"inner equilibrium {eq.status} (residual {eq.residual:.1e})")
                pt = obj.point(theta, eq.u, eq.v, {(x, y): eq.results[x][y]
                                                   for x in range(obj.X) for y in range(obj.Y)})
                state["eq"] = eq
                cache[key] = [pt, None]
            except _EVAL_ERRORS as exc:
                log.debug("inner solve failed at %s: %s", theta, exc)
                state["failures"] += 1
                cache[key] = [None, None]
        return cache[key]

    def f(theta):
        pt = at(theta)[0]
        return math.inf if pt is None else -pt.parts.total / obj.N_hat

    def grad(theta):
        ent = at(theta)
        log.debug("nested: f %.10g", -ent[0].parts.total / obj.N_hat)
        if ent[1] is None:
            ent[1] = obj.derivatives(ent[0])
        return -_total_scores(obj, ent[0], ent[1]).sum(axis=0) / obj.N_hat

    Gi, hi = fam.inequalities()
    prob = nlp.NlpProblem(
        n=K, objective=f, gradient=grad, x0=theta0,
        ineq=(lambda t: Gi @ t - hi) if len(hi) else None,
        ineq_jac=(lambda t: Gi) if len(hi) else None,
    )
    if at(theta0)[0] is None:
        raise EquilibriumError("no equilibrium at the starting parameters")
    sol = nlp.minimize(prob, tol=tol, max_iter=max_iter, max_step=max_step)
    pt = at(sol.x)[0]
    flags = {"inner_failures": state["failures"]} if state["failures"] else {}
    return _finish(obj, pt, "nested", sol.status, sol.iterations, sol.kkt_residual, flags)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class EstimationConfig:
    family: str = "home_production"
    free: list | None = None
    method: str = "mpec"
    tol: float = 1e-7
    max_iter: int = 500
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown estimation settings {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.method not in ("mpec", "nested"):
            raise ValueError(f"method must be mpec or nested, got {cfg.method!r}")
        if cfg.family not in ("home_production", "tu"):
            raise ValueError(f"unknown model family {cfg.family!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "EstimationConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def estimate(model, data: Dataset, market: Market | None = None, config: EstimationConfig | None = None,
             theta0=None) -> EstimateResult:
    config = config or EstimationConfig()
    fn = estimate_mpec if config.method == "mpec" else estimate_nested
    return fn(model, data, theta0=theta0, market=market, free=config.free, tol=config.tol,
              max_iter=config.max_iter)
