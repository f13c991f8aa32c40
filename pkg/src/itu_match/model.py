"""Parametric collective household models.

The main family is the home-production model: each partner values private
consumption ``c``, leisure ``l`` and a public good ``Q`` produced from both
partners' housework, with Cobb-Douglas (log) utilities whose exponents depend
on the education class. Two small families ride along for testing: a
transferable-utility model with a linear frontier and the one-good public-good
model with a single budget constraint.

Every family provides a *pair problem*: the per-couple data the distance
solver needs (utilities, feasibility constraints, derivatives) expressed in
solver variables. For the log families the solver variables are the logs of
the goods, so positivity never has to be enforced explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

T_DEFAULT = 112.0
LOG_FLOOR = 1e-12
SUM_TOL = 1e-9


class DomainError(ValueError):
    """Raised when a utility or production input leaves its domain."""


def _as_tuple(values) -> tuple:
    if np.isscalar(values):
        values = [values]
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class Preferences:
    """Preference and technology parameters of the home-production model.

    Exponents are indexed by education class. ``delta_a`` and ``delta_b`` map
    pair-feature names (see :func:`pair_features`) to the loadings of the
    man's and the woman's non-economic gains.
    """

    a: tuple
    alpha: tuple
    A: tuple
    b: tuple
    beta: tuple
    B: tuple
    eta: float
    zeta: float = 1.0
    zeta_single: float = 1.0
    delta_a: Mapping[str, float] = field(default_factory=dict)
    delta_b: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("a", "alpha", "A", "b", "beta", "B"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        object.__setattr__(self, "delta_a", dict(self.delta_a))
        object.__setattr__(self, "delta_b", dict(self.delta_b))
        k = len(self.a)
        if k == 0 or any(len(getattr(self, n)) != k for n in ("alpha", "A", "b", "beta", "B")):
            raise ValueError("all exponent vectors need one entry per education class")
        for name in ("a", "alpha", "A", "b", "beta", "B"):
            vals = getattr(self, name)
            if not all(v > 0 and math.isfinite(v) for v in vals):
                raise ValueError(f"exponents {name} must be strictly positive, got {vals}")
        for e in range(k):
            if abs(self.a[e] + self.alpha[e] + self.A[e] - 1.0) > SUM_TOL:
                raise ValueError(f"a + alpha + A must equal 1 for class {e}")
            if abs(self.b[e] + self.beta[e] + self.B[e] - 1.0) > SUM_TOL:
                raise ValueError(f"b + beta + B must equal 1 for class {e}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not (self.zeta > 0 and self.zeta_single > 0):
            raise ValueError("production scales must be positive")
        for d in (self.delta_a, self.delta_b):
            if not all(math.isfinite(float(v)) for v in d.values()):
                raise ValueError("delta loadings must be finite")

    @classmethod
    def from_shares(cls, men, women, eta, **kwargs) -> "Preferences":
        """Build from ``(a, alpha)`` and ``(b, beta)`` pairs per class.

        The public-good exponent is the remainder ``1 - a - alpha``.
        """
        a, alpha = zip(*men)
        b, beta = zip(*women)
        A = [1.0 - x - y for x, y in men]
        B = [1.0 - x - y for x, y in women]
        return cls(a=a, alpha=alpha, A=A, b=b, beta=beta, B=B, eta=eta, **kwargs)

    @property
    def n_classes(self) -> int:
        return len(self.a)

    def theta_names(self) -> list[str]:
        names = []
        for e in range(self.n_classes):
            names += [f"a[{e}]", f"alpha[{e}]"]
        for e in range(self.n_classes):
            names += [f"b[{e}]", f"beta[{e}]"]
        names.append("eta")
        names += [f"delta_a[{k}]" for k in self.delta_a]
        names += [f"delta_b[{k}]" for k in self.delta_b]
        return names

    def to_theta(self) -> np.ndarray:
        vals = []
        for e in range(self.n_classes):
            vals += [self.a[e], self.alpha[e]]
        for e in range(self.n_classes):
            vals += [self.b[e], self.beta[e]]
        vals.append(self.eta)
        vals += list(self.delta_a.values())
        vals += list(self.delta_b.values())
        return np.array(vals, dtype=float)

    def with_theta(self, theta: Sequence[float]) -> "Preferences":
        theta = np.asarray(theta, dtype=float)
        k = self.n_classes
        men = [(theta[2 * e], theta[2 * e + 1]) for e in range(k)]
        women = [(theta[2 * k + 2 * e], theta[2 * k + 2 * e + 1]) for e in range(k)]
        pos = 4 * k
        eta = theta[pos]
        pos += 1
        da = dict(zip(self.delta_a, theta[pos:pos + len(self.delta_a)]))
        pos += len(self.delta_a)
        db = dict(zip(self.delta_b, theta[pos:pos + len(self.delta_b)]))
        return Preferences.from_shares(
            men, women, float(eta), zeta=self.zeta, zeta_single=self.zeta_single,
            delta_a={n: float(x) for n, x in da.items()},
            delta_b={n: float(x) for n, x in db.items()},
        )

    def to_dict(self) -> dict:
        return {
            "a": list(self.a), "alpha": list(self.alpha), "A": list(self.A),
            "b": list(self.b), "beta": list(self.beta), "B": list(self.B),
            "eta": self.eta, "zeta": self.zeta, "zeta_single": self.zeta_single,
            "delta_a": dict(self.delta_a), "delta_b": dict(self.delta_b),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Preferences":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class TypeSpec:
    """Observable characteristics of one type of man or woman."""

    id: str
    mass: float = 1.0
    wage: float | None = None
    education: int = 0
    age: float | None = None


def pair_features(man: TypeSpec, woman: TypeSpec, n_classes: int = 2) -> dict[str, float]:
    """Pair characteristics the non-economic gains load on."""
    f = {"const": 1.0}
    for k in range(n_classes):
        f[f"edu_man_{k}"] = float(man.education == k)
        f[f"edu_woman_{k}"] = float(woman.education == k)
    f["same_edu"] = float(man.education == woman.education)
    if man.age is not None and woman.age is not None:
        f["age_man"] = float(man.age)
        f["age_woman"] = float(woman.age)
        f["abs_age_diff"] = abs(float(man.age) - float(woman.age))
    return f


@dataclass(frozen=True)
class PairContext:
    wage_man: float
    wage_woman: float
    T: float = T_DEFAULT
    education_man: int = 0
    education_woman: int = 0
    delta_a: float = 0.0
    delta_b: float = 0.0
    features: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.wage_man > 0 and self.wage_woman > 0):
            raise ValueError("wages must be positive")
        if not self.T > 0:
            raise ValueError("time endowment must be positive")
        if not (math.isfinite(self.delta_a) and math.isfinite(self.delta_b)):
            raise ValueError("non-economic gains must be finite")

    @property
    def full_income(self) -> float:
        return self.T * (self.wage_man + self.wage_woman)


def delta_value(loadings: Mapping[str, float], features: Mapping[str, float]) -> float:
    missing = [k for k in loadings if k not in features]
    if missing:
        raise KeyError(f"pair features missing for loadings {missing}")
    return float(sum(v * features[k] for k, v in loadings.items()))


def make_pair(prefs: Preferences, man: TypeSpec, woman: TypeSpec, T: float = T_DEFAULT) -> PairContext:
    feats = pair_features(man, woman, prefs.n_classes)
    return PairContext(
        wage_man=float(man.wage), wage_woman=float(woman.wage), T=T,
        education_man=man.education, education_woman=woman.education,
        delta_a=delta_value(prefs.delta_a, feats), delta_b=delta_value(prefs.delta_b, feats),
        features=feats,
    )


@dataclass(frozen=True)
class Allocation:
    c_a: float
    c_b: float
    l_a: float
    l_b: float
    h_a: float
    h_b: float
    Q: float

    FIELDS = ("c_a", "c_b", "l_a", "l_b", "h_a", "h_b", "Q")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in self.FIELDS])

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


@dataclass(frozen=True)
class SingleSolution:
    c: float
    l: float
    h: float
    reservation_utility: float


def production(prefs: Preferences, h_a: float, h_b: float) -> float:
    if h_a < 0 or h_b < 0:
        raise DomainError(f"negative housework input ({h_a}, {h_b})")
    if h_a == 0 or h_b == 0:
        return 0.0
    return prefs.zeta * h_a ** prefs.eta * h_b ** (1.0 - prefs.eta)


def couple_allocation(prefs: Preferences, c_a, c_b, l_a, l_b, h_a, h_b) -> Allocation:
    return Allocation(c_a, c_b, l_a, l_b, h_a, h_b, production(prefs, h_a, h_b))


def _safe_log(x: float, what: str) -> float:
    if not x >= LOG_FLOOR:
        raise DomainError(f"{what} = {x!r} is below the log-domain floor {LOG_FLOOR}")
    return math.log(x)


def married_utilities(prefs: Preferences, pair: PairContext, alloc: Allocation) -> tuple[float, float]:
    ea, eb = pair.education_man, pair.education_woman
    logQ = _safe_log(alloc.Q, "Q")
    U = (pair.delta_a + prefs.a[ea] * _safe_log(alloc.c_a, "c_a")
         + prefs.alpha[ea] * _safe_log(alloc.l_a, "l_a") + prefs.A[ea] * logQ)
    V = (pair.delta_b + prefs.b[eb] * _safe_log(alloc.c_b, "c_b")
         + prefs.beta[eb] * _safe_log(alloc.l_b, "l_b") + prefs.B[eb] * logQ)
    return U, V


def _single_exponents(prefs: Preferences, education: int, woman: bool):
    if woman:
        return prefs.b[education], prefs.beta[education], prefs.B[education]
    return prefs.a[education], prefs.alpha[education], prefs.A[education]


def solve_single(prefs: Preferences, wage: float, education: int, T: float = T_DEFAULT,
                 woman: bool = False) -> SingleSolution:
    """Singlehood optimum: Cobb-Douglas shares of full income ``T * wage``.

    The shares sum to one, so leisure plus housework is ``(alpha + A) T < T``
    and the time constraint never binds.
    """
    if not (wage > 0 and T > 0):
        raise ValueError("wage and time endowment must be positive")
    ec, el, eq = _single_exponents(prefs, education, woman)
    c, l, h = ec * T * wage, el * T, eq * T
    res = ec * math.log(c) + el * math.log(l) + eq * math.log(prefs.zeta_single * h)
    return SingleSolution(c, l, h, res)


def systematic_utilities(prefs: Preferences, pair: PairContext, alloc: Allocation) -> tuple[float, float]:
    U, V = married_utilities(prefs, pair, alloc)
    sm = solve_single(prefs, pair.wage_man, pair.education_man, pair.T)
    sf = solve_single(prefs, pair.wage_woman, pair.education_woman, pair.T, woman=True)
    return U - sm.reservation_utility, V - sf.reservation_utility


RESIDUAL_NAMES = ("budget", "time_a", "time_b", "c_a", "c_b", "l_a", "l_b", "h_a", "h_b")


def constraint_residuals(pair: PairContext, alloc: Allocation) -> np.ndarray:
    """Feasibility residuals, all ``<= 0`` iff the allocation is feasible."""
    wx, wy, T = pair.wage_man, pair.wage_woman, pair.T
    budget = alloc.c_a + alloc.c_b + (alloc.l_a + alloc.h_a) * wx + (alloc.l_b + alloc.h_b) * wy - T * (wx + wy)
    return np.array([
        budget, alloc.l_a + alloc.h_a - T, alloc.l_b + alloc.h_b - T,
        -alloc.c_a, -alloc.c_b, -alloc.l_a, -alloc.l_b, -alloc.h_a, -alloc.h_b,
    ])


# ---------------------------------------------------------------------------
# Pair problems in solver variables


class HomeProductionProblem:
    """One couple of the home-production model in log variables.

    Solver variables are ``y = log(c_a, l_a, h_a, c_b, l_b, h_b)``. Both
    utilities are then affine in ``y``; the budget and the two time
    constraints are sums of exponentials (convex), scaled to be unit-free.
    Utilities are systematic: net of the singlehood reservation utility.
    """

    n = 6
    constraint_names = ("budget", "time_a", "time_b")
    has_hours = True

    def __init__(self, prefs: Preferences, pair: PairContext):
        self.prefs, self.pair = prefs, pair
        ea, eb = pair.education_man, pair.education_woman
        a, al, A = prefs.a[ea], prefs.alpha[ea], prefs.A[ea]
        b, be, B = prefs.b[eb], prefs.beta[eb], prefs.B[eb]
        eta = prefs.eta
        self.single_man = solve_single(prefs, pair.wage_man, ea, pair.T)
        self.single_woman = solve_single(prefs, pair.wage_woman, eb, pair.T, woman=True)
        lz = math.log(prefs.zeta)
        self.ua = np.array([a, al, A * eta, 0.0, 0.0, A * (1 - eta)])
        self.vb = np.array([0.0, 0.0, B * eta, b, be, B * (1 - eta)])
        self.u0 = pair.delta_a + A * lz - self.single_man.reservation_utility
        self.v0 = pair.delta_b + B * lz - self.single_woman.reservation_utility
        wx, wy = pair.wage_man, pair.wage_woman
        self.Y = pair.full_income
        self.price = np.array([1.0, wx, wx, 1.0, wy, wy])
        self.lower = None

    # utilities -------------------------------------------------------------
    def utilities(self, y):
        return self.u0 + self.ua @ y, self.v0 + self.vb @ y

    def utility_jac(self, y):
        return np.vstack([self.ua, self.vb])

    def utility_hess(self, y):
        return None

    # constraints -----------------------------------------------------------
    def constraints(self, y):
        x = np.exp(y)
        T = self.pair.T
        return np.array([self.price @ x / self.Y - 1.0, (x[1] + x[2]) / T - 1.0, (x[4] + x[5]) / T - 1.0])

    def constraint_jac(self, y):
        x = np.exp(y)
        T = self.pair.T
        J = np.zeros((3, 6))
        J[0] = self.price * x / self.Y
        J[1, 1:3] = x[1:3] / T
        J[2, 4:6] = x[4:6] / T
        return J

    def constraint_hess(self, y, xi):
        x = np.exp(y)
        T = self.pair.T
        d = xi[0] * self.price * x / self.Y
        d[1:3] += xi[1] * x[1:3] / T
        d[4:6] += xi[2] * x[4:6] / T
        return np.diag(d)

    def constraint_scale(self):
        """Factors turning multipliers of the scaled constraints into raw units."""
        return np.array([1.0 / self.Y, 1.0 / self.pair.T, 1.0 / self.pair.T])

    # allocations -----------------------------------------------------------
    def allocation(self, y) -> Allocation:
        c_a, l_a, h_a, c_b, l_b, h_b = np.exp(y)
        return couple_allocation(self.prefs, c_a, c_b, l_a, l_b, h_a, h_b)

    def to_vars(self, alloc: Allocation) -> np.ndarray:
        return np.log([alloc.c_a, alloc.l_a, alloc.h_a, alloc.c_b, alloc.l_b, alloc.h_b])

    def hours(self, y) -> np.ndarray:
        """Leisure and housework ``(l_a, l_b, h_a, h_b)``."""
        x = np.exp(y)
        return np.array([x[1], x[4], x[2], x[5]])

    def interior_welfare(self, lam: float) -> np.ndarray:
        """Goods maximising ``lam U + (1 - lam) V`` ignoring the time caps."""
        p, pr = self.prefs, self.pair
        ea, eb = pr.education_man, pr.education_woman
        G = lam * p.A[ea] + (1 - lam) * p.B[eb]
        Y, wx, wy = self.Y, pr.wage_man, pr.wage_woman
        return np.array([
            lam * p.a[ea] * Y, lam * p.alpha[ea] * Y / wx, G * p.eta * Y / wx,
            (1 - lam) * p.b[eb] * Y, (1 - lam) * p.beta[eb] * Y / wy, G * (1 - p.eta) * Y / wy,
        ])

    def _clip_time(self, x):
        T = self.pair.T
        for i, j in ((1, 2), (4, 5)):
            s = x[i] + x[j]
            if s > T * (1 - 1e-3):
                x[i] *= T * (1 - 1e-3) / s
                x[j] *= T * (1 - 1e-3) / s
        return x

    def welfare_start(self, lam: float):
        lam = min(max(lam, 1e-300), 1 - 1e-16)
        x = self._clip_time(self.interior_welfare(lam))
        return np.log(x), np.array([1.0, 0.0, 0.0])

    def seed(self, u: float, v: float):
        """Frontier point whose utility difference matches ``u - v``.

        Uses the interior closed form, so it is exact whenever the time caps
        are slack; otherwise it is a feasible starting guess.
        Returns ``(y, lambda1, xi)``.
        """
        target = u - v

        def gap(t):
            lam = 0.5 * (1 + math.tanh(t / 2))  # logistic, overflow-free
            lam = min(max(lam, 1e-300), 1 - 1e-16)
            U, V = self.utilities(np.log(self.interior_welfare(lam)))
            return U - V - target

        lo, hi = -2.0, 2.0
        while gap(lo) > 0 and lo > -700:
            lo *= 2
        while gap(hi) < 0 and hi < 36:
            hi *= 2
        if gap(lo) > 0 or gap(hi) < 0:
            t = lo if gap(lo) > 0 else hi
        else:
            t = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15)
        lam = 0.5 * (1 + math.tanh(t / 2))
        y, xi = self.welfare_start(lam)
        return y, lam, xi

    def cold_start(self):
        """Equal split of full income using each partner's single-style shares."""
        p, pr = self.prefs, self.pair
        ea, eb = pr.education_man, pr.education_woman
        half = 0.5 * self.Y
        Q_share = 0.5 * (p.A[ea] + p.B[eb])
        x = np.array([
            p.a[ea] * half, p.alpha[ea] * half / pr.wage_man, Q_share * p.eta * half / pr.wage_man,
            p.b[eb] * half, p.beta[eb] * half / pr.wage_woman, Q_share * (1 - p.eta) * half / pr.wage_woman,
        ])
        return np.log(self._clip_time(x))

    # parameter derivatives -------------------------------------------------
    def theta_names(self):
        return self.prefs.theta_names()

    def theta_grads(self, y):
        """Derivatives of the systematic utilities with respect to theta.

        Public-good exponents are the remainders ``1 - a - alpha`` and
        ``1 - b - beta``. Singlehood terms follow from the envelope theorem.
        """
        p, pr = self.prefs, self.pair
        k = p.n_classes
        names = p.theta_names()
        dU, dV = np.zeros(len(names)), np.zeros(len(names))
        lc_a, ll_a, lh_a, lc_b, ll_b, lh_b = y
        logQ = math.log(p.zeta) + p.eta * lh_a + (1 - p.eta) * lh_b
        sm, sf = self.single_man, self.single_woman
        logQm = math.log(p.zeta_single * sm.h)
        logQf = math.log(p.zeta_single * sf.h)
        ea, eb = pr.education_man, pr.education_woman
        dU[2 * ea] = (lc_a - logQ) - (math.log(sm.c) - logQm)
        dU[2 * ea + 1] = (ll_a - logQ) - (math.log(sm.l) - logQm)
        dV[2 * k + 2 * eb] = (lc_b - logQ) - (math.log(sf.c) - logQf)
        dV[2 * k + 2 * eb + 1] = (ll_b - logQ) - (math.log(sf.l) - logQf)
        dU[4 * k] = p.A[ea] * (lh_a - lh_b)
        dV[4 * k] = p.B[eb] * (lh_a - lh_b)
        pos = 4 * k + 1
        for i, name in enumerate(p.delta_a):
            dU[pos + i] = pr.features.get(name, 0.0)
        pos += len(p.delta_a)
        for i, name in enumerate(p.delta_b):
            dV[pos + i] = pr.features.get(name, 0.0)
        return dU, dV

    def corner_flags(self, y, tol=1e-7):
        g = self.constraints(y)
        flags = {"time_a": bool(g[1] > -tol), "time_b": bool(g[2] > -tol)}
        flags["floor"] = bool(np.any(np.exp(y) < LOG_FLOOR))
        return flags

    # slow oracle -----------------------------------------------------------
    def min_expenditure(self, u_level: float, v_level: float, grid: int = 81) -> float:
        """Cheapest full-income cost of reaching systematic utilities ``(u, v)``.

        Independent of the solver: for fixed housework the private parts have
        a closed-form Cobb-Douglas cost (with the leisure cap); housework is
        searched on a log grid and refined by Nelder-Mead.
        """
        from scipy.optimize import minimize as sp_minimize

        p, pr = self.prefs, self.pair
        ea, eb = pr.education_man, pr.education_woman
        T, wx, wy = pr.T, pr.wage_man, pr.wage_woman

        def private_cost(k, a, al, w, cap):
            # min c + w l  s.t.  a log c + al log l >= k,  l <= cap
            m = math.exp((k - a * math.log(a) - al * math.log(al / w)) / (a + al))
            l = al * m / w
            if l <= cap:
                return a * m + w * l
            return math.exp((k - al * math.log(cap)) / a) + w * cap

        u_raw = u_level + self.single_man.reservation_utility - pr.delta_a
        v_raw = v_level + self.single_woman.reservation_utility - pr.delta_b

        def cost(lh):
            h_a, h_b = math.exp(lh[0]), math.exp(lh[1])
            if h_a >= T or h_b >= T:
                return math.inf
            logQ = math.log(p.zeta) + p.eta * lh[0] + (1 - p.eta) * lh[1]
            ca = private_cost(u_raw - p.A[ea] * logQ, p.a[ea], p.alpha[ea], wx, T - h_a)
            cb = private_cost(v_raw - p.B[eb] * logQ, p.b[eb], p.beta[eb], wy, T - h_b)
            return ca + cb + wx * h_a + wy * h_b

        grid_pts = np.linspace(math.log(1e-4), math.log(T * (1 - 1e-9)), grid)
        best = min(((cost((s, t)), (s, t)) for s in grid_pts for t in grid_pts), key=lambda r: r[0])
        res = sp_minimize(cost, np.array(best[1]), method="Nelder-Mead",
                          options={"xatol": 1e-12, "fatol": 1e-12 * self.Y, "maxiter": 4000})
        return min(res.fun, best[0])

    @property
    def budget(self) -> float:
        return self.Y


@dataclass(frozen=True)
class TransferableUtility:
    """Test family with a linear frontier ``u + v = phi[x, y]``."""

    phi: tuple

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(tuple(float(v) for v in row) for row in np.atleast_2d(self.phi)))

    def theta_names(self):
        return ["phi"]


class TransferableProblem:
    """Linear frontier ``u + v = phi`` written as ``U = phi/2 + q_a``,
    ``V = phi/2 + q_b`` with ``q_a + q_b <= 0``."""

    n = 2
    constraint_names = ("budget",)
    has_hours = False
    lower = None

    def __init__(self, phi: float):
        self.phi = float(phi)

    def utilities(self, y):
        return 0.5 * self.phi + y[0], 0.5 * self.phi + y[1]

    def utility_jac(self, y):
        return np.eye(2)

    def utility_hess(self, y):
        return None

    def constraints(self, y):
        return np.array([y[0] + y[1]])

    def constraint_jac(self, y):
        return np.array([[1.0, 1.0]])

    def constraint_hess(self, y, xi):
        return np.zeros((2, 2))

    def constraint_scale(self):
        return np.ones(1)

    def seed(self, u, v):
        d = 0.5 * (u + v - self.phi)
        return np.array([u - d - 0.5 * self.phi, v - d - 0.5 * self.phi]), 0.5, np.array([0.5])

    def cold_start(self):
        return np.zeros(2)

    def welfare_start(self, lam):
        return np.zeros(2), np.array([0.5])

    def allocation(self, y):
        return tuple(float(v) for v in y)

    def theta_names(self):
        return ["phi"]

    def theta_grads(self, y):
        return np.array([0.5]), np.array([0.5])

    def corner_flags(self, y, tol=1e-7):
        return {}

    def min_expenditure(self, u_level, v_level):
        return (u_level - 0.5 * self.phi) + (v_level - 0.5 * self.phi)

    budget = 0.0


@dataclass(frozen=True)
class PublicGoodPreferences:
    """One private good each plus a public good, one budget ``q_a + q_b + Q <= phi``."""

    A: float
    B: float
    phi: float
    delta_a: float = 0.0
    delta_b: float = 0.0


class PublicGoodProblem:
    n = 3
    constraint_names = ("budget",)
    has_hours = False
    lower = None

    def __init__(self, prefs: PublicGoodPreferences):
        self.prefs = prefs
        self.ua = np.array([1.0, 0.0, prefs.A])
        self.vb = np.array([0.0, 1.0, prefs.B])

    def utilities(self, y):
        return self.prefs.delta_a + self.ua @ y, self.prefs.delta_b + self.vb @ y

    def utility_jac(self, y):
        return np.vstack([self.ua, self.vb])

    def utility_hess(self, y):
        return None

    def constraints(self, y):
        return np.array([np.exp(y).sum() / self.prefs.phi - 1.0])

    def constraint_jac(self, y):
        return (np.exp(y) / self.prefs.phi)[None, :]

    def constraint_hess(self, y, xi):
        return np.diag(xi[0] * np.exp(y) / self.prefs.phi)

    def constraint_scale(self):
        return np.array([1.0 / self.prefs.phi])

    def _welfare(self, lam):
        p = self.prefs
        G = lam * p.A + (1 - lam) * p.B
        tot = lam + (1 - lam) + G
        return np.array([lam, 1 - lam, G]) * p.phi / tot

    def welfare_start(self, lam):
        lam = min(max(lam, 1e-300), 1 - 1e-16)
        return np.log(self._welfare(lam)), np.array([1.0 / (1 + self.prefs.A * lam + self.prefs.B * (1 - lam))])

    def seed(self, u, v):
        def gap(t):
            lam = 0.5 * (1 + math.tanh(t / 2))
            lam = min(max(lam, 1e-300), 1 - 1e-16)
            U, V = self.utilities(np.log(self._welfare(lam)))
            return U - V - (u - v)
        lo, hi = -2.0, 2.0
        while gap(lo) > 0 and lo > -700:
            lo *= 2
        while gap(hi) < 0 and hi < 36:
            hi *= 2
        t = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15)
        lam = 0.5 * (1 + math.tanh(t / 2))
        y, xi = self.welfare_start(lam)
        return y, lam, xi

    def cold_start(self):
        return np.log(np.full(3, self.prefs.phi / 3))

    def allocation(self, y):
        return tuple(float(v) for v in np.exp(y))

    def theta_names(self):
        return ["A", "B", "delta_a", "delta_b"]

    def theta_grads(self, y):
        return np.array([y[2], 0.0, 1.0, 0.0]), np.array([0.0, y[2], 0.0, 1.0])

    def corner_flags(self, y, tol=1e-7):
        return {"floor": bool(np.any(np.exp(y) < LOG_FLOOR))}

    def min_expenditure(self, u_level, v_level):
        # cost is convex in log Q; its derivative is monotone, so root-find it
        p = self.prefs
        ka, kb = u_level - p.delta_a, v_level - p.delta_b

        def cost(lQ):
            return math.exp(ka - p.A * lQ) + math.exp(kb - p.B * lQ) + math.exp(lQ)

        def slope(lQ):
            return -p.A * math.exp(ka - p.A * lQ) - p.B * math.exp(kb - p.B * lQ) + math.exp(lQ)

        lo, hi = -1.0, 1.0
        while slope(lo) > 0:
            lo *= 2
        while slope(hi) < 0:
            hi *= 2
        return cost(brentq(slope, lo, hi, xtol=1e-14, rtol=1e-15))

    @property
    def budget(self):
        return self.prefs.phi


def pair_problem(prefs, pair=None):
    """Build the solver-space problem for one couple.

    ``prefs`` may be :class:`Preferences` (with a :class:`PairContext`),
    :class:`PublicGoodPreferences`, a scalar TU surplus, or a ready problem.
    """
    if isinstance(prefs, Preferences):
        return HomeProductionProblem(prefs, pair)
    if isinstance(prefs, PublicGoodPreferences):
        return PublicGoodProblem(prefs)
    if isinstance(prefs, (int, float)):
        return TransferableProblem(prefs)
    if isinstance(prefs, TransferableUtility):
        if pair is None and len(prefs.phi) == 1 and len(prefs.phi[0]) == 1:
            return TransferableProblem(prefs.phi[0][0])
        x, y = pair
        return TransferableProblem(prefs.phi[x][y])
    if hasattr(prefs, "utilities") and hasattr(prefs, "constraints"):
        return prefs
    raise TypeError(f"cannot build a pair problem from {type(prefs).__name__}")


# ---------------------------------------------------------------------------
# Properness diagnostics


@dataclass
class CheckResult:
    name: str
    passed: bool
    witness: object = None


@dataclass
class PropernessReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _random_feasible(rng, pair: PairContext, prefs: Preferences) -> Allocation:
    """Feasible interior allocation: random time use, random budget split."""
    T = pair.T
    la, ha = rng.dirichlet([1, 1, 1])[:2] * T * 0.98 + 0.01 * T * np.array([0.1, 0.1])
    lb, hb = rng.dirichlet([1, 1, 1])[:2] * T * 0.98 + 0.01 * T * np.array([0.1, 0.1])
    slack = pair.full_income - (la + ha) * pair.wage_man - (lb + hb) * pair.wage_woman
    share, used = rng.uniform(0.05, 0.95), rng.uniform(0.5, 1.0)
    return couple_allocation(prefs, share * used * slack, (1 - share) * used * slack, la, lb, ha, hb)


def validate_properness(prefs: Preferences, pair: PairContext, sample_size: int = 200, seed: int = 0,
                        utilities: Callable | None = None) -> PropernessReport:
    """Sample-based checks of the properness assumptions for one couple.

    ``utilities(alloc) -> (U, V)`` overrides the model's married utilities,
    which lets alternative specifications be screened.
    """
    util = utilities or (lambda al: married_utilities(prefs, pair, al))
    rng = np.random.default_rng(seed)
    samples = [_random_feasible(rng, pair, prefs) for _ in range(sample_size)]
    checks = []

    # strictly increasing in each good
    bad = None
    for al in samples:
        U0, V0 = util(al)
        for f, who in (("c_a", 0), ("l_a", 0), ("c_b", 1), ("l_b", 1)):
            bumped = replace(al, **{f: getattr(al, f) * (1 + 1e-3)})
            if not util(bumped)[who] > (U0, V0)[who]:
                bad = (f, al)
                break
        bumped = replace(al, Q=al.Q * (1 + 1e-3))
        U1, V1 = util(bumped)
        if bad is None and not (U1 >= U0 and V1 >= V0 and (U1 > U0 or V1 > V0)):
            bad = ("Q", al)
        if bad:
            break
    checks.append(CheckResult("monotone", bad is None, bad))

    # vital private goods: utility diverges as consumption vanishes
    bad = None
    for al in samples[:20]:
        for f, who in (("c_a", 0), ("c_b", 1)):
            vals = []
            for eps in (1e-3, 1e-6, 1e-9, 1e-12):
                try:
                    vals.append(util(replace(al, **{f: eps}))[who])
                except DomainError:
                    vals.append(-math.inf)
            # a bounded limit shows shrinking decrements; log-type divergence keeps them steady
            drops = -np.diff(vals)
            if not (np.all(drops > 0) and drops[-1] >= 0.5 * drops[0]):
                bad = (f, vals)
                break
        if bad:
            break
    checks.append(CheckResult("vital_good", bad is None, bad))

    # convexity of the feasible set: midpoints of feasible points stay feasible
    bad = None
    for i in range(len(samples) - 1):
        x, y = samples[i].as_array(), samples[i + 1].as_array()
        t = rng.uniform()
        mid = t * x + (1 - t) * y
        m = Allocation(*mid[:6], production(prefs, mid[4], mid[5]))
        if np.any(constraint_residuals(pair, m) > 1e-9 * pair.full_income):
            bad = (samples[i], samples[i + 1], t)
            break
        qx = production(prefs, x[4], x[5])
        qy = production(prefs, y[4], y[5])
        if m.Q < t * qx + (1 - t) * qy - 1e-9:
            bad = ("production not concave", samples[i], samples[i + 1], t)
            break
    checks.append(CheckResult("convex_feasible_set", bad is None, bad))

    # transferability: moving private consumption from one partner to the other
    bad = None
    for al in samples:
        eps = 1e-3 * al.c_a
        moved = replace(al, c_a=al.c_a - eps, c_b=al.c_b + eps)
        if np.any(constraint_residuals(pair, moved) > 1e-9 * pair.full_income) or not util(moved)[1] > util(al)[1]:
            bad = al
            break
    checks.append(CheckResult("transferability", bad is None, bad))

    # strict quasi-concavity along random chords
    bad = None
    for i in range(len(samples) - 1):
        x, y = samples[i], samples[i + 1]
        mid = Allocation(*(0.5 * (x.as_array() + y.as_array())))
        for who in (0, 1):
            if not util(mid)[who] > min(util(x)[who], util(y)[who]) - 1e-12:
                bad = (who, x, y)
        if bad:
            break
    checks.append(CheckResult("quasi_concave", bad is None, bad))
    return PropernessReport(checks)
