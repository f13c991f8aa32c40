"""Small dense constrained minimiser.

Sequential quadratic programming for

    min f(x)  s.t.  c_E(x) = 0,  c_I(x) <= 0,  x >= lower

with an l1 exact-penalty merit function, Armijo backtracking plus a
second-order correction, and either a user-supplied Hessian of the Lagrangian
or a Powell-damped BFGS approximation. QP subproblems are solved by a
Mehrotra primal-dual interior-point method; an elastic reformulation takes
over when the linearised constraints are inconsistent.

Multipliers follow the convention

    grad f + J_E' lam_eq + J_I' lam_ineq - lam_lower = 0,   lam_ineq, lam_lower >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

CONVERGED = "converged"
MAX_ITER = "max_iterations"
INFEASIBLE = "infeasible"
STALLED = "stalled"


@dataclass
class NlpProblem:
    n: int
    objective: Callable
    gradient: Callable
    x0: np.ndarray
    eq: Optional[Callable] = None
    eq_jac: Optional[Callable] = None
    ineq: Optional[Callable] = None
    ineq_jac: Optional[Callable] = None
    lower: Optional[np.ndarray] = None
    hessian: Optional[Callable] = None  # (x, lam_eq, lam_ineq) -> Hessian of the Lagrangian
    lam_eq0: Optional[np.ndarray] = None
    lam_ineq0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("problem dimension must be >= 1")
        self.x0 = np.asarray(self.x0, dtype=float).copy()
        if self.x0.shape != (self.n,):
            raise ValueError("start point has the wrong shape")
        if self.lower is not None:
            self.lower = np.asarray(self.lower, dtype=float)
            if np.any(self.x0 < self.lower):
                raise ValueError("start point violates the lower bounds")


@dataclass
class NlpSolution:
    x: np.ndarray
    fun: float
    lam_eq: np.ndarray
    lam_ineq: np.ndarray
    lam_lower: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    stationarity: float = 0.0
    feasibility: float = 0.0
    complementarity: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


# ---------------------------------------------------------------------------
# convex QP by primal-dual interior point


def solve_qp(H, g, A=None, b=None, C=None, e=None, tol=1e-13, max_iter=100):
    """Minimise ``0.5 d'Hd + g'd`` s.t. ``A d = b``, ``C d <= e``.

    ``H`` must be positive semidefinite (positive definite on the null space
    of ``A``). Returns ``(d, y, z, ok)`` with equality multipliers ``y`` and
    inequality multipliers ``z >= 0``.
    """
    # overflow in a diverging interior-point step is detected and handled below
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_qp(H, g, A, b, C, e, tol, max_iter)


def _solve_qp(H, g, A, b, C, e, tol, max_iter):
    n = len(g)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(A)
    C = np.zeros((0, n)) if C is None else np.atleast_2d(C)
    b = np.zeros(0) if b is None else np.asarray(b, float)
    e = np.zeros(0) if e is None else np.asarray(e, float)
    me, mi = A.shape[0], C.shape[0]
    scale = 1.0 + max(np.abs(g).max(initial=0), np.abs(b).max(initial=0), np.abs(e).max(initial=0))

    def kkt_solve(M11, r1, r2):
        K = np.block([[M11, A.T], [A, -1e-14 * np.eye(me)]]) if me else M11
        rhs = np.concatenate([r1, r2])
        try:
            sol = np.linalg.solve(K, rhs)
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            if not (np.all(np.isfinite(K)) and np.all(np.isfinite(rhs))):
                raise
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:n], sol[n:]

    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g)) and np.all(np.isfinite(A))
            and np.all(np.isfinite(C)) and np.all(np.isfinite(b)) and np.all(np.isfinite(e))):
        return np.zeros(n), np.zeros(me), np.zeros(mi), False
    if mi == 0:
        try:
            d, y = kkt_solve(H, -g, b)
        except np.linalg.LinAlgError:
            return np.zeros(n), np.zeros(me), np.zeros(0), False
        ok = np.allclose(A @ d, b, atol=1e-9 * scale) if me else True
        return d, y, np.zeros(0), ok

    d = np.zeros(n)
    y = np.zeros(me)
    s = np.maximum(e - C @ d, 1.0)
    z = np.ones(mi)
    best = (math.inf, d, y, z)
    for _ in range(max_iter):
        rd = H @ d + g + A.T @ y + C.T @ z
        rp = A @ d - b
        ri = C @ d + s - e
        mu = s @ z / mi
        err = max(np.abs(rd).max(), np.abs(rp).max(initial=0), np.abs(ri).max(), mu)
        if not math.isfinite(err):
            break
        if err < best[0]:
            best = (err, d, y, z)
        if err <= tol * scale:
            return d, y, z, True
        W = z / s
        M11 = H + C.T @ (W[:, None] * C)

        def direction(sigma_mu, corr):
            # complementarity target: s*z + ds*dz = sigma_mu - corr
            rc = -s * z + sigma_mu - corr
            r1 = -rd - C.T @ ((rc + z * ri) / s)
            dd, dy = kkt_solve(M11, r1, -rp)
            ds = -ri - C @ dd
            dz = (rc - z * ds) / s
            return dd, dy, ds, dz

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, np.min(-v[neg] / dv[neg])) if np.any(neg) else 1.0

        try:
            dd, dy, ds, dz = direction(0.0, 0.0)
            ap, ad = max_step(s, ds), max_step(z, dz)
            mu_aff = (s + ap * ds) @ (z + ad * dz) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dd, dy, ds, dz = direction(sigma * mu, ds * dz)
        except np.linalg.LinAlgError:
            break
        ap = 0.995 * max_step(s, ds)
        ad = 0.995 * max_step(z, dz)
        d = d + ap * dd
        s = s + ap * ds
        y = y + ad * dy
        z = z + ad * dz
        if max(ap, ad) < 1e-12:
            break
    # rounding can stall the last digits; accept the best iterate if it is close
    err, d, y, z = best
    return d, y, z, err <= 1e-8 * scale


def _elastic_qp(H, g, A, b, C, e, penalty):
    """QP with l1-penalised slacks on every constraint; always feasible."""
    n, me, mi = len(g), A.shape[0], C.shape[0]
    m = 2 * me + mi
    Hx = np.zeros((n + m, n + m))
    Hx[:n, :n] = H
    Hx[n:, n:] = 1e-10 * np.eye(m)
    gx = np.concatenate([g, penalty * np.ones(m)])
    # A d - p + q = b ;  C d - r <= e ;  p, q, r >= 0
    Ax = np.hstack([A, -np.eye(me), np.eye(me), np.zeros((me, mi))])
    Cx = np.vstack([
        np.hstack([C, np.zeros((mi, 2 * me)), -np.eye(mi)]),
        np.hstack([np.zeros((m, n)), -np.eye(m)]),
    ])
    ex = np.concatenate([e, np.zeros(m)])
    d, y, z, ok = solve_qp(Hx, gx, Ax, b, Cx, ex)
    return d[:n], y, z[:mi], ok


# ---------------------------------------------------------------------------
# SQP driver


class _Evaluator:
    def __init__(self, p: NlpProblem):
        self.p = p
        self.n_lower = 0 if p.lower is None else int(np.sum(np.isfinite(p.lower)))
        self.lower_idx = np.zeros(0, int) if p.lower is None else np.flatnonzero(np.isfinite(p.lower))

    def eq(self, x):
        return np.zeros(0) if self.p.eq is None else np.atleast_1d(np.asarray(self.p.eq(x), float))

    def eq_jac(self, x):
        return np.zeros((0, self.p.n)) if self.p.eq is None else np.atleast_2d(np.asarray(self.p.eq_jac(x), float))

    def ineq(self, x):
        gen = np.zeros(0) if self.p.ineq is None else np.atleast_1d(np.asarray(self.p.ineq(x), float))
        return np.concatenate([gen, self.p.lower[self.lower_idx] - x[self.lower_idx]]) if self.n_lower else gen

    def ineq_jac(self, x):
        J = np.zeros((0, self.p.n)) if self.p.ineq is None else np.atleast_2d(np.asarray(self.p.ineq_jac(x), float))
        if self.n_lower:
            B = np.zeros((self.n_lower, self.p.n))
            B[np.arange(self.n_lower), self.lower_idx] = -1.0
            J = np.vstack([J, B]) if J.size else B
        return J


def _kkt(grad, Je, Ji, ce, ci, le, li):
    stat = grad + Je.T @ le + Ji.T @ li
    st = np.abs(stat).max(initial=0)
    feas = max(np.abs(ce).max(initial=0), np.max(ci, initial=0))
    comp = np.abs(li * ci).max(initial=0)
    dual = max(0.0, -np.min(li, initial=0))
    return max(st, feas, comp, dual), st, feas, comp


def _ls_multipliers(grad, Je, Ji, ci, tol):
    """Least-squares multipliers on the active set (minimum norm when degenerate)."""
    active = ci > -max(tol, 1e-10)
    M = np.vstack([Je, Ji[active]]).T
    if M.size == 0:
        return np.zeros(Je.shape[0]), np.zeros(Ji.shape[0])
    mult = np.linalg.lstsq(M, -grad, rcond=None)[0]
    le = mult[:Je.shape[0]]
    li = np.zeros(Ji.shape[0])
    li[active] = mult[Je.shape[0]:]
    return le, li


def _make_pd(H, floor=1e-8):
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    big = max(1.0, np.abs(w).max(initial=0))
    lo = floor * big
    if w.min() >= lo:
        return H
    return (V * np.maximum(w, lo)) @ V.T


def minimize(problem: NlpProblem, tol: float = 1e-9, max_iter: int = 200, max_step: float = 10.0) -> NlpSolution:
    """Solve ``problem`` to a KKT point; see the module docstring for conventions.

    ``max_step`` caps the sup-norm of each search direction.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = problem
    ev = _Evaluator(p)
    x = p.x0.copy()
    n = p.n
    f = float(p.objective(x))
    grad = np.asarray(p.gradient(x), float)
    ce, ci = ev.eq(x), ev.ineq(x)
    Je, Ji = ev.eq_jac(x), ev.ineq_jac(x)
    me, mi_gen = len(ce), (0 if p.ineq is None else len(ci) - ev.n_lower)

    le = np.zeros(me) if p.lam_eq0 is None else np.asarray(p.lam_eq0, float).copy()
    li = np.zeros(len(ci))
    if p.lam_ineq0 is not None:
        li[:mi_gen] = p.lam_ineq0

    B = np.eye(n)
    penalty = 1.0
    history = []
    status = MAX_ITER
    it = 0
    idle = 0  # consecutive iterations without measurable progress

    def pack(status, le, li, x, f, grad, Je, Ji, ce, ci, it):
        res, st, feas, comp = _kkt(grad, Je, Ji, ce, ci, le, li)
        return NlpSolution(
            x=x, fun=f, lam_eq=le, lam_ineq=li[:mi_gen], lam_lower=li[mi_gen:], status=status,
            kkt_residual=res, iterations=it, stationarity=st, feasibility=feas, complementarity=comp,
            history=history,
        )

    # a warm start may already be optimal
    for cand_le, cand_li in ((le, li), _ls_multipliers(grad, Je, Ji, ci, tol)):
        if len(cand_li) and np.min(cand_li) < -tol:
            continue
        if _kkt(grad, Je, Ji, ce, ci, cand_le, cand_li)[0] <= tol:
            return pack(CONVERGED, cand_le, cand_li, x, f, grad, Je, Ji, ce, ci, 0)

    def merit(fv, cev, civ, rho):
        return fv + rho * (np.abs(cev).sum() + np.maximum(civ, 0).sum())

    for it in range(1, max_iter + 1):
        H = B
        if p.hessian is not None:
            Hx = np.asarray(p.hessian(x, le, li[:mi_gen]), float)
            if np.all(np.isfinite(Hx)):
                H = _make_pd(Hx)
        d, le_qp, li_qp, ok = solve_qp(H, grad, Je, -ce, Ji, -ci)
        if not ok:
            d, le_qp, li_qp, ok = _elastic_qp(H, grad, Je, -ce, Ji, -ci, penalty=max(1e3, 10 * penalty))
            if not ok:
                status = INFEASIBLE
                break
        li_qp = np.maximum(li_qp, 0.0)
        big = np.abs(d).max(initial=0.0)
        if big > max_step:
            d = d * (max_step / big)

        res_here = _kkt(grad, Je, Ji, ce, ci, le_qp, li_qp)[0]
        history.append(res_here)
        if res_here <= tol:
            le, li = le_qp, li_qp
            status = CONVERGED
            break

        penalty = max(penalty, 1.1 * max(np.abs(le_qp).max(initial=0), li_qp.max(initial=0)) + 1e-3)
        phi0 = merit(f, ce, ci, penalty)
        dphi = grad @ d - penalty * (np.abs(ce).sum() + np.maximum(ci, 0).sum())
        dphi = min(dphi, -1e-16)

        def trial(step):
            xt = x + step
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    ft = float(p.objective(xt))
                    cet, cit = ev.eq(xt), ev.ineq(xt)
            except (ValueError, FloatingPointError, OverflowError):
                return None
            if not (np.isfinite(ft) and np.all(np.isfinite(cet)) and np.all(np.isfinite(cit))):
                return None
            return xt, ft, cet, cit

        alpha = 1.0
        accepted = None
        while alpha > 1e-12:
            t = trial(alpha * d)
            if t is not None and merit(t[1], t[2], t[3], penalty) <= phi0 + 1e-4 * alpha * dphi:
                accepted = t
                break
            if alpha == 1.0 and t is not None:
                # second-order correction: pull the full step back onto the linearisation
                act = np.concatenate([np.ones(me, bool), (ci > -1e-8) | (li_qp > 0)])
                Jall = np.vstack([Je, Ji])[act]
                call = np.concatenate([t[2], t[3]])[act]
                if Jall.size and np.all(np.isfinite(call)) and np.all(np.isfinite(Jall)):
                    dc = -np.linalg.lstsq(Jall, call, rcond=None)[0]
                    t2 = trial(d + dc)
                    if t2 is not None and merit(t2[1], t2[2], t2[3], penalty) <= phi0 + 1e-4 * dphi:
                        accepted = t2
                        break
            alpha *= 0.5
        if accepted is None:
            status = STALLED
            break
        x_new, f_new, ce_new, ci_new = accepted
        step_frac = min(alpha, 1.0)
        le = le + step_frac * (le_qp - le)
        li = li + step_frac * (li_qp - li)
        grad_new = np.asarray(p.gradient(x_new), float)
        Je_new, Ji_new = ev.eq_jac(x_new), ev.ineq_jac(x_new)
        if p.hessian is None:
            s = x_new - x
            yv = (grad_new + Je_new.T @ le + Ji_new.T @ li) - (grad + Je.T @ le + Ji.T @ li)
            Bs = B @ s
            sBs = s @ Bs
            if sBs > 1e-300:
                sy = s @ yv
                theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
                r = theta * yv + (1 - theta) * Bs
                B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / (s @ r)
        infeas, infeas_new = np.abs(ce).sum(), np.abs(ce_new).sum()
        tiny = np.abs(x_new - x).max() <= 1e-13 * (1 + np.abs(x).max()) or (
            abs(f_new - f) <= 1e-15 * (1 + abs(f)) and infeas_new >= infeas - 1e-14 * (1 + infeas))
        idle = idle + 1 if tiny else 0
        x, f, grad, ce, ci, Je, Ji = x_new, f_new, grad_new, ce_new, ci_new, Je_new, Ji_new
        if idle >= 10:
            status = STALLED
            break
    else:
        status = MAX_ITER

    if status != CONVERGED:
        # report the best multipliers available at the final iterate
        cand = _ls_multipliers(grad, Je, Ji, ci, tol)
        if (not len(cand[1]) or cand[1].min() >= -tol) and \
                _kkt(grad, Je, Ji, ce, ci, *cand)[0] < _kkt(grad, Je, Ji, ce, ci, le, li)[0]:
            le, li = cand
        res = _kkt(grad, Je, Ji, ce, ci, le, li)
        if res[0] <= tol:
            status = CONVERGED
        elif status == STALLED and res[2] > max(tol, 1e-6):
            status = INFEASIBLE
    return pack(status, le, li, x, f, grad, Je, Ji, ce, ci, it)
