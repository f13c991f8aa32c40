"""Logit ITU marriage-market equilibrium.

With ``u_x = -log mu_x0`` and ``v_y = -log mu_0y`` the market clears when

    exp(-u_x) + sum_y exp(-D_xy(u_x, v_y)) = n_x   for every man type x,
    exp(-v_y) + sum_x exp(-D_xy(u_x, v_y)) = m_y   for every woman type y.

:func:`ipfp_solve` alternates one-dimensional root-finds on the two sides
(Gauss-Seidel across sides) and finishes with a joint Newton polish whose
Jacobian comes for free from the distance multipliers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .distance import DistanceResult, SolverError, solve_problem
from .model import (
    T_DEFAULT,
    Preferences,
    PublicGoodPreferences,
    TransferableUtility,
    TypeSpec,
    make_pair,
    pair_problem,
)

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"

DIST_TOL = 1e-12
MASS_FLOOR = 1e-12


@dataclass
class Market:
    """Types on both sides of the market and their masses."""

    men: list
    women: list
    T: float = T_DEFAULT
    family: str = "home_production"
    prefs: object = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.men = [m if isinstance(m, TypeSpec) else TypeSpec(**m) for m in self.men]
        self.women = [w if isinstance(w, TypeSpec) else TypeSpec(**w) for w in self.women]
        if not self.men or not self.women:
            raise ValueError("a market needs at least one type on each side")
        for t in self.men + self.women:
            if not (t.mass > 0 and math.isfinite(t.mass)):
                raise ValueError(f"type {t.id!r} has non-positive mass {t.mass}")
        for side in (self.men, self.women):
            ids = [t.id for t in side]
            dup = sorted({i for i in ids if ids.count(i) > 1})
            if dup:
                raise ValueError(f"duplicate type ids {dup}")

    @property
    def n(self) -> np.ndarray:
        return np.array([t.mass for t in self.men], dtype=float)

    @property
    def m(self) -> np.ndarray:
        return np.array([t.mass for t in self.women], dtype=float)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.men), len(self.women)

    def pair(self, prefs, x: int, y: int):
        return make_pair(prefs, self.men[x], self.women[y], self.T)


def pair_problems(prefs, market: Market) -> list[list]:
    """Solver-space problems for every ``(x, y)``, indexed ``[x][y]``."""
    X, Y = market.shape
    if isinstance(prefs, Preferences):
        for t in market.men + market.women:
            if t.wage is None:
                raise ValueError(f"type {t.id!r} has no wage")
            if not 0 <= t.education < prefs.n_classes:
                raise ValueError(f"type {t.id!r} has education class {t.education} "
                                 f"outside 0..{prefs.n_classes - 1}")
        return [[pair_problem(prefs, market.pair(prefs, x, y)) for y in range(Y)] for x in range(X)]
    if isinstance(prefs, TransferableUtility):
        phi = np.asarray(prefs.phi)
        if phi.shape == (1, 1):
            phi = np.full((X, Y), phi[0, 0])
        if phi.shape != (X, Y):
            raise ValueError(f"phi has shape {phi.shape}, market is {X}x{Y}")
        return [[pair_problem(float(phi[x, y])) for y in range(Y)] for x in range(X)]
    if isinstance(prefs, (int, float, PublicGoodPreferences)):
        return [[pair_problem(prefs) for _ in range(Y)] for _ in range(X)]
    raise TypeError(f"unsupported model {type(prefs).__name__}")


@dataclass
class Equilibrium:
    mu: np.ndarray
    mu_x0: np.ndarray
    mu_0y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    status: str = CONVERGED
    iterations: int = 0
    residual: float = 0.0
    update: float = 0.0
    results: list = None
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def lambda1(self) -> np.ndarray:
        return np.array([[r.lambda1 for r in row] for row in self.results])

    @property
    def lambda2(self) -> np.ndarray:
        return np.array([[r.lambda2 for r in row] for row in self.results])

    def summary(self) -> dict:
        return {
            "status": self.status, "iterations": self.iterations, "residual": self.residual,
            "update": self.update, "mu": self.mu.tolist(), "mu_x0": self.mu_x0.tolist(),
            "mu_0y": self.mu_0y.tolist(), "u": self.u.tolist(), "v": self.v.tolist(),
        }


class EquilibriumError(RuntimeError):
    """A distance solve failed inside the equilibrium loop."""

    def __init__(self, msg, x=None, y=None):
        super().__init__(msg)
        self.x, self.y = x, y


def _solve(prob, u, v, start, x, y, tol=DIST_TOL) -> DistanceResult:
    """Distance with fallbacks: analytic seed, warm start, cold start."""
    tried = []
    for st in (None, start, "cold"):
        if st is None and tried:
            continue
        if isinstance(st, DistanceResult) and not st.converged:
            continue
        r = solve_problem(prob, u, v, start=st, tol=tol)
        if r.converged:
            return r
        tried.append(r)
    best = min(tried, key=lambda r: r.kkt_residual)
    if best.kkt_residual <= 1e3 * tol:
        return best
    raise EquilibriumError(
        f"distance solve failed for pair ({x}, {y}) at u={u!r}, v={v!r}: {best.status}, "
        f"kkt {best.kkt_residual:.2e}", x, y)


# ---------------------------------------------------------------------------
# one-dimensional side updates


def _side_root(probs, other, mass, u0, starts, transpose, idx, tol):
    """Solve ``exp(-u) + sum_k exp(-D_k(u, other_k)) = mass`` for ``u``.

    ``transpose`` flips the argument order (women's side). Safeguarded Newton
    inside a bracket grown by exponential expansion; the left side is
    strictly decreasing in ``u``.
    """
    K = len(probs)

    def evaluate(u):
        res = []
        for k in range(K):
            uu, vv = (other[k], u) if transpose else (u, other[k])
            x, y = (k, idx) if transpose else (idx, k)
            res.append(_solve(probs[k], uu, vv, starts[k], x, y))
        mu = np.array([math.exp(-r.z_star) for r in res])
        lam = np.array([r.lambda2 if transpose else r.lambda1 for r in res])
        f = math.exp(-u) + mu.sum() - mass
        df = -math.exp(-u) - lam @ mu
        return f, df, res

    lo, hi = -math.inf, math.inf
    u = u0
    f, df, res = evaluate(u)
    ftol = 1e-15 * max(mass, 1.0)
    for _ in range(200):
        if abs(f) <= ftol:
            break
        if f > 0:
            lo = u
        else:
            hi = u
        step = -f / df if df < 0 else (1.0 if f > 0 else -1.0)
        cand = u + step
        if not lo < cand < hi:
            if math.isfinite(lo) and math.isfinite(hi):
                cand = 0.5 * (lo + hi)
            elif math.isfinite(lo):
                cand = lo + max(2.0 * (lo - u0 if lo != u0 else 1.0), 1.0)
            else:
                cand = hi - max(2.0 * (u0 - hi if hi != u0 else 1.0), 1.0)
        if abs(cand - u) <= tol * 1e-3 * max(1.0, abs(u)):
            u = cand
            f, df, res = evaluate(u)
            break
        u = cand
        f, df, res = evaluate(u)
    return u, res


def _side_task(args):
    return _side_root(*args)


def _sweep(problems, u, v, n, m, results, men_side, pool, tol):
    X, Y = len(u), len(v)
    if men_side:
        tasks = [([problems[x][y] for y in range(Y)], v, n[x], u[x], [results[x][y] for y in range(Y)],
                  False, x, tol) for x in range(X)]
    else:
        tasks = [([problems[x][y] for x in range(X)], u, m[y], v[y], [results[x][y] for x in range(X)],
                  True, y, tol) for y in range(Y)]
    out = list(pool.map(_side_task, tasks)) if pool is not None else [_side_task(t) for t in tasks]
    new = np.array([o[0] for o in out])
    for i, (_, res) in enumerate(out):
        for k, r in enumerate(res):
            if men_side:
                results[i][k] = r
            else:
                results[k][i] = r
    return new


def _evaluate_grid(problems, u, v, starts=None, tol=DIST_TOL):
    X, Y = len(u), len(v)
    return [[_solve(problems[x][y], u[x], v[y], None if starts is None else starts[x][y], x, y, tol)
             for y in range(Y)] for x in range(X)]


def _system(u, v, n, m, results):
    mu = np.array([[math.exp(-r.z_star) for r in row] for row in results])
    gx = (np.exp(-u) + mu.sum(axis=1) - n) / n
    gy = (np.exp(-v) + mu.sum(axis=0) - m) / m
    return mu, np.concatenate([gx, gy])


def _newton_polish(problems, u, v, n, m, results, tol, max_iter=30):
    """Joint Newton on the scaled clearing system; returns the last iterate."""
    X, Y = len(u), len(v)
    mu, g = _system(u, v, n, m, results)
    for _ in range(max_iter):
        if np.abs(g).max() <= tol:
            break
        l1 = np.array([[r.lambda1 for r in row] for row in results])
        l2 = np.array([[r.lambda2 for r in row] for row in results])
        J = np.zeros((X + Y, X + Y))
        J[:X, :X] = np.diag(-np.exp(-u) - (l1 * mu).sum(axis=1))
        J[:X, X:] = -l2 * mu
        J[X:, :X] = (-l1 * mu).T
        J[X:, X:] = np.diag(-np.exp(-v) - (l2 * mu).sum(axis=0))
        J[:X] /= n[:, None]
        J[X:] /= m[:, None]
        try:
            d = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(J, -g, rcond=None)[0]
        t, gnorm, accepted = 1.0, np.abs(g).max(), False
        while t > 1e-4:
            un, vn = u + t * d[:X], v + t * d[X:]
            try:
                rn = _evaluate_grid(problems, un, vn, results)
            except EquilibriumError:
                t *= 0.5
                continue
            mun, gn = _system(un, vn, n, m, rn)
            if np.abs(gn).max() < gnorm:
                u, v, results, mu, g, accepted = un, vn, rn, mun, gn, True
                break
            t *= 0.5
        if not accepted:
            break
    return u, v, results, mu, g


def _initial_payoffs(n, m, init):
    if init is None:
        return -np.log(n / 2), -np.log(m / 2)
    if isinstance(init, Equilibrium):
        return np.array(init.u, float), np.array(init.v, float)
    u, v = init
    return np.array(u, float), np.array(v, float)


def ipfp_solve(prefs, market: Market, tol: float = 1e-10, max_iter: int = 1000, init=None,
               polish: bool = True, workers: int = 1, polish_from: float = 1e-2) -> Equilibrium:
    """Equilibrium of ``market`` under model ``prefs``.

    ``init`` may be a previous :class:`Equilibrium` or a ``(u, v)`` pair; the
    default is the half-singles start ``u_x = -log(n_x / 2)``. Once the sweep
    update drops below ``polish_from`` a joint Newton step finishes the job.
    Convergence requires both the last update and the scaled clearing
    residuals to be at most ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    problems = pair_problems(prefs, market)
    n, m = market.n, market.m
    u, v = _initial_payoffs(n, m, init)
    if len(u) != len(n) or len(v) != len(m):
        raise ValueError("initial payoffs do not match the market size")
    starts = init.results if isinstance(init, Equilibrium) and init.results is not None else None
    results = _evaluate_grid(problems, u, v, starts)
    history = []
    status = MAX_ITER
    update = math.inf
    it = 0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(1, max_iter + 1):
            u_new = _sweep(problems, u, v, n, m, results, True, pool, tol)
            v_new = _sweep(problems, u_new, v, n, m, results, False, pool, tol)
            update = max(np.abs(u_new - u).max(), np.abs(v_new - v).max())
            u, v = u_new, v_new
            mu, g = _system(u, v, n, m, results)
            resid = float(np.abs(g).max())
            history.append((update, resid))
            log.debug("sweep %d: update %.3e residual %.3e", it, update, resid)
            if update <= tol and resid <= tol:
                status = CONVERGED
                break
            if polish and update <= polish_from:
                u2, v2, r2, mu2, g2 = _newton_polish(problems, u, v, n, m, results, tol)
                if np.abs(g2).max() <= tol:
                    update = max(np.abs(u2 - u).max(), np.abs(v2 - v).max())
                    u, v, results = u2, v2, r2
                    history.append((update, float(np.abs(g2).max())))
                    # a final sweep confirms the fixed point
                    u_chk = _sweep(problems, u, v, n, m, results, True, pool, tol)
                    v_chk = _sweep(problems, u_chk, v, n, m, results, False, pool, tol)
                    update = max(np.abs(u_chk - u).max(), np.abs(v_chk - v).max())
                    u, v = u_chk, v_chk
                    mu, g = _system(u, v, n, m, results)
                    history.append((update, float(np.abs(g).max())))
                    if update <= tol and np.abs(g).max() <= tol:
                        status = CONVERGED
                        break
                # not there yet: more sweeps, then try again closer in
                polish_from = min(polish_from, update) * 1e-2
    except (EquilibriumError, SolverError) as exc:
        log.warning("equilibrium failed: %s", exc)
        raise
    finally:
        if pool is not None:
            pool.shutdown()
    mu, g = _system(u, v, n, m, results)
    return Equilibrium(
        mu=mu, mu_x0=np.exp(-u), mu_0y=np.exp(-v), u=u, v=v, status=status, iterations=it,
        residual=float(np.abs(g).max()), update=float(update), results=results, history=history,
    )


def matching_from_payoffs(prefs, market: Market, u, v):
    """Masses implied by payoffs, plus the log-odds utilities they encode."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("payoffs must be finite")
    problems = pair_problems(prefs, market)
    results = _evaluate_grid(problems, u, v)
    mu = np.array([[math.exp(-r.z_star) for r in row] for row in results])
    mu_x0, mu_0y = np.exp(-u), np.exp(-v)
    return Matching(mu=mu, mu_x0=mu_x0, mu_0y=mu_0y,
                    U=np.log(mu) - np.log(mu_x0)[:, None], V=np.log(mu) - np.log(mu_0y)[None, :],
                    results=results)


@dataclass
class Matching:
    mu: np.ndarray
    mu_x0: np.ndarray
    mu_0y: np.ndarray
    U: np.ndarray
    V: np.ndarray
    results: list = None


@dataclass
class ResidualReport:
    scarcity_men: np.ndarray
    scarcity_women: np.ndarray
    consistency: np.ndarray
    implied_distance: np.ndarray
    min_mass: float
    thin_pairs: int

    @property
    def max_abs(self) -> float:
        return float(max(np.abs(self.scarcity_men).max(), np.abs(self.scarcity_women).max(),
                         np.abs(self.consistency).max(), np.abs(self.implied_distance).max()))

    def to_dict(self) -> dict:
        return {
            "scarcity_men": self.scarcity_men.tolist(), "scarcity_women": self.scarcity_women.tolist(),
            "consistency": self.consistency.tolist(), "implied_distance": self.implied_distance.tolist(),
            "min_mass": self.min_mass, "thin_pairs": self.thin_pairs, "max_abs": self.max_abs,
        }


def residuals(prefs, market: Market, eq: Equilibrium) -> ResidualReport:
    """Re-evaluate every equilibrium condition from scratch.

    Distances are recomputed with fresh solves, both at ``(u_x, v_y)`` and at
    the log-odds utilities implied by the masses, where they must vanish.
    """
    problems = pair_problems(prefs, market)
    X, Y = market.shape
    mu = np.asarray(eq.mu, float)
    sx = eq.mu_x0 + mu.sum(axis=1) - market.n
    sy = eq.mu_0y + mu.sum(axis=0) - market.m
    cons = np.empty((X, Y))
    implied = np.empty((X, Y))
    for x in range(X):
        for y in range(Y):
            r = _solve(problems[x][y], eq.u[x], eq.v[y], None, x, y)
            cons[x, y] = mu[x, y] - math.exp(-r.z_star)
            if mu[x, y] > 0:
                U = math.log(mu[x, y] / eq.mu_x0[x])
                V = math.log(mu[x, y] / eq.mu_0y[y])
                implied[x, y] = _solve(problems[x][y], U, V, None, x, y).z_star
            else:
                implied[x, y] = math.inf
    masses = np.concatenate([mu.ravel(), eq.mu_x0, eq.mu_0y])
    return ResidualReport(sx, sy, cons, implied, float(masses.min()), int((mu < MASS_FLOOR).sum()))


def with_masses(eq: Equilibrium, mu) -> Equilibrium:
    """Copy of ``eq`` with the couple masses replaced (for diagnostics)."""
    return replace(eq, mu=np.asarray(mu, float))
