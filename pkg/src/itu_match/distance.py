"""Distance functions on bargaining sets generated by collective models.

``D(u, v) = min{z : (u - z, v - z) feasible}`` is computed as one small NLP in
``(z, y)`` where ``y`` are the solver variables of the pair problem:

    min z   s.t.  u - z = U(y),  v - z = V(y),  g_r(y) <= 0.

The multipliers of the two utility constraints are the partial derivatives
of ``D`` in ``u`` and ``v`` and double as the couple's Pareto weights.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nlp
from .model import pair_problem


@dataclass
class DistanceResult:
    z_star: float
    allocation: object
    lambda1: float
    lambda2: float
    xi: np.ndarray
    status: str
    corner_flags: dict = field(default_factory=dict)
    y: np.ndarray = None
    kkt_residual: float = 0.0
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == nlp.CONVERGED

    @property
    def corner(self) -> bool:
        return any(self.corner_flags.values())


class SolverError(RuntimeError):
    pass


def _distance_nlp(prob, u, v, free_disposal, y0, lam0, xi0):
    n = prob.n

    def util_cons(x):
        U, V = prob.utilities(x[1:])
        return np.array([u - x[0] - U, v - x[0] - V])

    def util_jac(x):
        J = np.empty((2, n + 1))
        J[:, 0] = -1.0
        J[:, 1:] = -prob.utility_jac(x[1:])
        return J

    def g(x):
        return prob.constraints(x[1:])

    def g_jac(x):
        J = prob.constraint_jac(x[1:])
        return np.hstack([np.zeros((J.shape[0], 1)), J])

    def hess(x, le, li):
        H = np.zeros((n + 1, n + 1))
        y = x[1:]
        if free_disposal:
            lu, xi = li[:2], li[2:]
        else:
            lu, xi = le, li
        uh = prob.utility_hess(y)
        if uh is not None:
            H[1:, 1:] -= lu[0] * uh[0] + lu[1] * uh[1]
        H[1:, 1:] += prob.constraint_hess(y, xi)
        return H

    U0, V0 = prob.utilities(y0)
    # start on the tighter of the two utility constraints
    z0 = max(u - U0, v - V0)
    x0 = np.concatenate([[z0], y0])
    lam = np.array([lam0, 1.0 - lam0])
    common = dict(n=n + 1, objective=lambda x: x[0], gradient=lambda x: np.eye(n + 1)[0], x0=x0, hessian=hess)
    if free_disposal:
        return nlp.NlpProblem(
            **common,
            ineq=lambda x: np.concatenate([util_cons(x), g(x)]),
            ineq_jac=lambda x: np.vstack([util_jac(x), g_jac(x)]),
            lam_ineq0=np.concatenate([lam, xi0]),
        )
    return nlp.NlpProblem(**common, eq=util_cons, eq_jac=util_jac, ineq=g, ineq_jac=g_jac,
                          lam_eq0=lam, lam_ineq0=xi0)


def solve_problem(prob, u: float, v: float, free_disposal: bool = False, start=None,
                  tol: float = 1e-9, max_iter: int = 200) -> DistanceResult:
    """Distance for an already-built pair problem.

    ``start`` is ``"seed"`` (analytic frontier guess, the default), ``"cold"``
    (equal split) or a previous :class:`DistanceResult` to warm-start from.
    """
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError("u and v must be finite")
    m = len(prob.constraint_names)
    if isinstance(start, DistanceResult) and start.y is not None:
        y0 = start.y.copy()
        lam0 = start.lambda1
        xi0 = start.xi / prob.constraint_scale()
    elif start == "cold":
        y0, lam0, xi0 = prob.cold_start(), 0.5, np.zeros(m)
    else:
        y0, lam0, xi0 = prob.seed(u, v)
    sol = nlp.minimize(_distance_nlp(prob, u, v, free_disposal, y0, lam0, xi0), tol=tol, max_iter=max_iter)
    if free_disposal:
        lam, xi = sol.lam_ineq[:2], sol.lam_ineq[2:]
    else:
        lam, xi = sol.lam_eq, sol.lam_ineq
    y = sol.x[1:]
    try:
        alloc = prob.allocation(y)
    except Exception:  # noqa: BLE001 - allocation below the log floor
        alloc = None
    flags = prob.corner_flags(y)
    return DistanceResult(
        z_star=float(sol.x[0]), allocation=alloc, lambda1=float(lam[0]), lambda2=float(lam[1]),
        xi=np.asarray(xi) * prob.constraint_scale(), status=sol.status, corner_flags=flags, y=y,
        kkt_residual=sol.kkt_residual, iterations=sol.iterations,
    )


def distance(prefs, pair, u: float, v: float, free_disposal: bool = False, start=None,
             tol: float = 1e-9, max_iter: int = 200) -> DistanceResult:
    return solve_problem(pair_problem(prefs, pair), u, v, free_disposal, start, tol, max_iter)


def pareto_weights(result: DistanceResult) -> tuple[float, float]:
    return result.lambda1, result.lambda2


def distance_gradient(result: DistanceResult, prefs, pair=None):
    """``(dD/du, dD/dv, dD/dtheta)`` from the multipliers of one solve."""
    prob = pair_problem(prefs, pair)
    dU, dV = prob.theta_grads(result.y)
    return result.lambda1, result.lambda2, -result.lambda1 * dU - result.lambda2 * dV


def weighted_welfare_solve(prefs, pair, lambda1: float, tol: float = 1e-10, return_vars: bool = False):
    """Maximise ``lambda1 U + (1 - lambda1) V`` over the feasible set."""
    if not 0.0 < lambda1 < 1.0:
        raise ValueError("lambda1 must lie strictly between 0 and 1")
    prob = pair_problem(prefs, pair)
    w = np.array([lambda1, 1.0 - lambda1])

    def f(y):
        U, V = prob.utilities(y)
        return -(w[0] * U + w[1] * V)

    def grad(y):
        return -(w @ prob.utility_jac(y))

    def hess(y, le, li):
        H = prob.constraint_hess(y, li)
        uh = prob.utility_hess(y)
        if uh is not None:
            H = H - w[0] * uh[0] - w[1] * uh[1]
        return H

    y0, xi0 = prob.welfare_start(lambda1)
    sol = nlp.minimize(nlp.NlpProblem(
        n=prob.n, objective=f, gradient=grad, x0=y0, ineq=prob.constraints, ineq_jac=prob.constraint_jac,
        hessian=hess, lam_ineq0=xi0,
    ), tol=tol)
    if not sol.converged:
        raise SolverError(f"welfare maximisation failed: {sol.status} (kkt {sol.kkt_residual:.2e})")
    if return_vars:
        return prob.allocation(sol.x), sol.x
    return prob.allocation(sol.x)


def distance_bisection(prob, u: float, v: float, lo: float = -50.0, hi: float = 50.0, tol: float = 1e-6) -> float:
    """Slow reference: bisection on ``z`` with an expenditure-minimisation test.

    ``(u - z, v - z)`` is attainable iff the cheapest way to deliver it costs
    no more than the pair's resources (``prob.budget``).
    """
    def feasible(z):
        return prob.min_expenditure(u - z, v - z) <= prob.budget

    while not feasible(hi):
        hi *= 2
    while feasible(lo):
        lo *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# batch evaluation


def _solve_chunk(args):
    prefs, items = args
    return [distance(prefs, pair, u, v, start=start) for pair, u, v, start in items]


def distance_batch(prefs, pairs, points, worker_count: int = 1, starts=None) -> list[DistanceResult]:
    """Distances for aligned lists of pairs and ``(u, v)`` points.

    The index range is partitioned into contiguous blocks, one per worker;
    results come back in input order and do not depend on ``worker_count``.
    Failures are reported per element through ``status``.
    """
    pairs, points = list(pairs), list(points)
    if len(pairs) != len(points):
        raise ValueError("pairs and points must be aligned")
    starts = list(starts) if starts is not None else [None] * len(pairs)
    items = [(pr, float(u), float(v), st) for pr, (u, v), st in zip(pairs, points, starts)]
    workers = max(1, int(worker_count))
    if workers == 1 or len(items) < 2:
        return _solve_chunk((prefs, items))
    blocks = np.array_split(np.arange(len(items)), min(workers, len(items)))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_solve_chunk, [(prefs, [items[i] for i in blk]) for blk in blocks])
        return [r for part in parts for r in part]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ITU_MATCH_WORKERS", "1")))
    except ValueError:
        return 1
