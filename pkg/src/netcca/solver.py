"""Solvers for compiled subproblems.

:func:`solve` is an over-relaxed ADMM on the splitting ``z = L v`` where
``L`` stacks the abs rows, the cone rows and the constraint operator. The
v-update solves with ``L^T L``, which does not depend on the ADMM step size,
so it is factored once per program and the step size can be rebalanced
freely from the primal and dual residuals. Once the zero pattern and the
active constraint rows stop changing, the iterate is snapped onto that
active set and accepted as soon as a subgradient certificate proves it
optimal.

:func:`reference_solve` is an independent check for small programs: HiGHS
on the epigraph LP for the fused family and a long projected-subgradient
run for cone programs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import lsq_linear

from ._admm import admm_dense
from .exceptions import Infeasible, TooLarge

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITERATIONS = "maxIterations"

REFERENCE_SIZE_CAP = 40
# iterations granted to a warm-started run before falling back to a cold start
WARM_BUDGET = 3000


@dataclass(frozen=True)
class SolverSettings:
    """ADMM options.

    ``tolerance`` bounds the relative KKT residual of an optimal answer.
    ``polish_every`` is the number of iterations between checks of the
    active set; programs with more than ``dense_threshold`` variables use
    sparse factorizations and are polished only at the end.
    """

    tolerance: float = 1e-7
    max_iterations: int = 50000
    verbose: bool = False
    relaxation: float = 1.5
    initial_step: float = 1.0
    check_every: int = 5
    adapt_every: int = 25
    dense_threshold: int = 400
    polish: bool = True
    polish_every: int = 50

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class Solution:
    primal: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == OPTIMAL


class _NormalSolver:
    """Sparse solves with ``Ls^T Ls + M^T M`` for large programs."""

    def __init__(self, Ls, cd):
        p = cd.dim
        s2 = cd.scale**2
        gram = (Ls.T @ Ls).tocsc()
        cov = cd.cov
        if cov is None:
            base = gram + s2 * sp.identity(p, format="csc")
            self._lu = spla.splu(base.tocsc())
            self.solve = self._lu.solve
            self.kind = "sparse"
            return
        # S~ = V diag(lam) V^T + r I, so M^T M = s2 (r^2 I + V diag((lam + r)^2 - r^2) V^T)
        r = cov.ridge
        base = gram + s2 * r * r * sp.identity(p, format="csc")
        self._lu = spla.splu(base.tocsc())
        V = cov.basis
        lam = cov.eigenvalues
        self._V = V
        self._gamma = s2 * ((lam + r) ** 2 - r * r)
        self._W = self._lu.solve(np.asfortranarray(V))
        cap = np.eye(V.shape[1]) + self._gamma[:, None] * (V.T @ self._W)
        self._cap = sla.lu_factor(cap, check_finite=False)
        self.solve = self._woodbury_solve
        self.kind = "sparse+lowrank"

    def _woodbury_solve(self, b):
        x0 = self._lu.solve(b)
        corr = sla.lu_solve(self._cap, self._gamma * (self._V.T @ x0), check_finite=False)
        return x0 - self._W @ corr


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _zero_solution(program, status=OPTIMAL):
    v = np.zeros(program.n_vars)
    return Solution(v, 0.0, status, 0.0, 0)


@dataclass
class _Pattern:
    """Active set read off the splitting variables."""

    zero_abs: np.ndarray
    zero_cone: np.ndarray
    at_lo: np.ndarray
    at_hi: np.ndarray

    @classmethod
    def of(cls, program, zs, zc, lo, hi):
        n_abs = program.abs_rows.shape[0]
        zero_abs = (zs[:n_abs] == 0) & (program.abs_weights > 0)
        zero_cone = (zs[n_abs:].reshape(-1, 2) == 0).all(axis=1)
        at_lo = zc == lo
        at_hi = (zc == hi) & ~at_lo
        return cls(zero_abs, zero_cone, at_lo, at_hi)

    def key(self):
        return b"".join(np.packbits(a).tobytes() for a in (self.zero_abs, self.zero_cone, self.at_lo, self.at_hi))


def solve(program, settings=None, warm_start=None, warm_dual=None):
    """Solve ``program`` to the requested tolerance.

    Parameters
    ----------
    program : ConvexProgram
    settings : SolverSettings, optional
    warm_start : ndarray, optional
        Starting value of the variable, e.g. the previous outer iterate.
    warm_dual : tuple, optional
        ``solution.info["dual"]`` of an earlier solve of a program with the
        same structure; ignored if the shapes do not match.

    Returns
    -------
    Solution
        Unpolished answers are read from the per-coordinate splitting
        variables, so coordinates shrunk to zero are exactly zero.

    Raises
    ------
    Infeasible
        If the constraint operator is zero and the interval excludes 0.
    """
    settings = settings or SolverSettings()
    cd = program.constraint
    p = program.n_vars
    if program.zero_is_feasible():
        return _zero_solution(program)
    if cd.scale == 0:
        raise Infeasible(f"||rhs||_inf = {np.max(np.abs(cd.rhs)):.6g} exceeds tau = {cd.tau:.6g}")

    Ls = sp.vstack([program.abs_rows, program.cone_rows], format="csr")
    lo = cd.rhs - cd.tau
    hi = cd.rhs + cd.tau
    v0 = np.zeros(p) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    us0, uc0, sigma0 = np.zeros(Ls.shape[0]), np.zeros(p), float(settings.initial_step)
    if warm_dual is not None and warm_dual[0].shape == us0.shape and warm_dual[1].shape == uc0.shape:
        us0, uc0, sigma0 = warm_dual[0].copy(), warm_dual[1].copy(), float(warm_dual[2])

    runner = _solve_dense if p <= settings.dense_threshold else _solve_sparse
    warm = warm_start is not None or warm_dual is not None
    budget = min(settings.max_iterations, WARM_BUDGET) if warm else settings.max_iterations
    run = runner(program, Ls, lo, hi, v0, us0, uc0, sigma0, replace(settings, max_iterations=budget))
    if warm and not (run[7] or run[9] is not None):
        # a start taken from a differently scaled program can stall; retry cold
        log.debug("warm start stalled after %d iterations; restarting cold", run[6])
        zero = np.zeros(p)
        run = runner(program, Ls, lo, hi, zero, np.zeros(Ls.shape[0]), zero.copy(), settings.initial_step, settings)
        run = run[:6] + (run[6] + budget,) + run[7:]
    v, zs, zc, us, uc, sigma, it, converged, kkt, certified, kind = run

    tol = settings.tolerance
    polished = certified is not None
    if polished:
        primal, kkt = certified
        status = OPTIMAL
    else:
        status = OPTIMAL if converged else MAX_ITERATIONS
        primal = zs[:p].copy()
    objective = program.objective(primal)
    if settings.polish and converged and not polished:
        pattern = _Pattern.of(program, zs, zc, lo, hi)
        cand = _polish(program, v, pattern)
        if cand is not None:
            cobj = program.objective(cand)
            # an infeasible iterate can undercut the optimum by about y^T violation
            slack = tol * (1 + abs(objective)) + sigma * np.abs(uc).sum() * program.violation(primal)
            if cobj <= objective + slack or _certify(program, cand, pattern) <= tol:
                primal, objective, polished = cand, cobj, True
    sol = Solution(
        primal,
        objective,
        status,
        float(kkt),
        it,
        {
            "step": sigma,
            "violation": program.violation(primal),
            "linear_solver": kind,
            "polished": polished,
            "dual": (us, uc, sigma),
        },
    )
    if status != OPTIMAL:
        log.warning("ADMM stopped after %d iterations (kkt residual %.2e)", it, kkt)
    return sol


def _solve_dense(program, Ls, lo, hi, v0, us, uc, sigma, settings):
    cd = program.constraint
    p = program.n_vars
    n_abs = program.abs_rows.shape[0]
    abs_w = program.abs_weights.astype(float)
    cone_w = program.cone_weights.astype(float)
    L = Ls.toarray()
    Md = cd.dense_operator()
    K = L.T @ L + Md.T @ Md
    Kinv = sla.cho_solve(sla.cho_factor(K, check_finite=False), np.eye(p), check_finite=False)
    zs = L @ v0
    zc = np.clip(Md @ v0, lo, hi)
    state = (zs, zc, us, uc)
    next_adapt = settings.adapt_every
    chunk = settings.polish_every if settings.polish else settings.max_iterations
    tol = settings.tolerance
    it = 0
    v = v0
    converged = False
    kkt = np.inf
    certified = None
    last_key = tried_key = None
    while it < settings.max_iterations and not converged:
        end = min(it + chunk, settings.max_iterations)
        opts = (
            float(sigma),
            float(settings.relaxation),
            float(tol),
            int(settings.check_every),
            int(settings.adapt_every),
            int(next_adapt),
        )
        v, sigma, next_adapt, it, converged, kkt = admm_dense(
            Kinv, L, Md, n_abs, abs_w, cone_w, lo, hi, state, it, end, opts
        )
        if converged or not settings.polish:
            continue
        pattern = _Pattern.of(program, zs, zc, lo, hi)
        key = pattern.key()
        # only try a pattern that has survived a whole chunk, and only once
        if key == last_key and key != tried_key:
            tried_key = key
            cand = _polish(program, v, pattern)
            if cand is not None:
                res = _certify(program, cand, pattern)
                if res <= tol:
                    certified = (cand, res)
                    break
        last_key = key
    return v, zs, zc, us, uc, sigma, it, converged, kkt, certified, "dense"


def _solve_sparse(program, Ls, lo, hi, v, us, uc, sigma, settings):
    """Python ADMM loop used when dense algebra would be too large."""
    cd = program.constraint
    p = program.n_vars
    normal = _NormalSolver(Ls, cd)
    LsT = Ls.T.tocsr()
    n_abs = program.abs_rows.shape[0]
    n_cone = program.cone_weights.size
    abs_w = program.abs_weights
    cone_w = program.cone_weights
    M = cd.apply
    alpha = settings.relaxation
    tol = settings.tolerance

    zs = Ls @ v
    zc = np.clip(M(v), lo, hi)

    def prox(xs):
        out = np.empty_like(xs)
        out[:n_abs] = _soft(xs[:n_abs], abs_w / sigma)
        if n_cone:
            blk = xs[n_abs:].reshape(-1, 2)
            nrm = np.sqrt((blk**2).sum(axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.where(nrm > 0, np.maximum(1.0 - (cone_w / sigma) / nrm, 0.0), 0.0)
            out[n_abs:] = (blk * f[:, None]).ravel()
        return out

    converged = False
    kkt = np.inf
    it = 0
    next_adapt = settings.adapt_every
    for it in range(1, settings.max_iterations + 1):
        v = normal.solve(LsT @ (zs - us) + M(zc - uc))
        Lvs = Ls @ v
        Lvc = M(v)
        hs = alpha * Lvs + (1 - alpha) * zs
        hc = alpha * Lvc + (1 - alpha) * zc
        zs_old, zc_old = zs, zc
        zs = prox(hs + us)
        zc = np.clip(hc + uc, lo, hi)
        us = us + hs - zs
        uc = uc + hc - zc

        if it % settings.check_every and it != settings.max_iterations:
            continue
        rp = np.sqrt(np.sum((Lvs - zs) ** 2) + np.sum((Lvc - zc) ** 2))
        rd = sigma * np.linalg.norm(LsT @ (zs - zs_old) + M(zc - zc_old))
        scale_p = max(np.sqrt(np.sum(Lvs**2) + np.sum(Lvc**2)), np.sqrt(np.sum(zs**2) + np.sum(zc**2)))
        # L^T y vanishes at the optimum, so normalize by the dual iterate itself
        scale_d = sigma * np.sqrt(np.sum(us**2) + np.sum(uc**2))
        kkt = max(rp / (1.0 + scale_p), rd / (1.0 + scale_d))
        if settings.verbose and it % (settings.check_every * 100) == 0:
            log.info("iter %d  primal %.3e  dual %.3e  step %.3e", it, rp, rd, sigma)
        if kkt <= tol:
            converged = True
            break
        if it >= next_adapt:
            ratio = (rp / max(scale_p, 1e-300)) / max(rd / max(scale_d, 1e-300), 1e-300)
            next_adapt = it + settings.adapt_every
            if ratio > 10 or ratio < 0.1:
                new = float(np.clip(sigma * np.sqrt(ratio), 1e-6, 1e6))
                us *= sigma / new
                uc *= sigma / new
                sigma = new
                next_adapt = it + settings.adapt_every * max(1, it // (4 * settings.adapt_every))
    return v, zs, zc, us, uc, sigma, it, converged, kkt, None, normal.kind


def _constraint_rows(cd, rows):
    p = cd.dim
    if cd.cov is None:
        out = np.zeros((rows.size, p))
        out[np.arange(rows.size), rows] = cd.scale
        return out
    V = cd.cov.basis
    out = cd.scale * ((V[rows] * cd.cov.eigenvalues) @ V.T)
    out[np.arange(rows.size), rows] += cd.scale * cd.cov.ridge
    return out


def _polish(program, v, pattern):
    """Snap ``v`` onto an active set.

    Abs rows and cone blocks in the zero pattern, and constraint rows at a
    bound, become equalities; ``v`` is moved by the smallest correction
    satisfying them. Returns None when the result is infeasible.
    """
    cd = program.constraint
    p = program.n_vars
    zero_abs = np.flatnonzero(pattern.zero_abs)
    blocks = []
    if zero_abs.size:
        blocks.append(program.abs_rows[zero_abs].toarray())
    zero_cone = np.flatnonzero(pattern.zero_cone)
    if zero_cone.size:
        rows = np.column_stack([2 * zero_cone, 2 * zero_cone + 1]).ravel()
        blocks.append(program.cone_rows[rows].toarray())
    active = np.flatnonzero(pattern.at_lo | pattern.at_hi)
    lo = cd.rhs - cd.tau
    hi = cd.rhs + cd.tau
    target = np.where(pattern.at_lo, lo, hi)[active]
    if active.size:
        blocks.append(_constraint_rows(cd, active))
    if not blocks:
        return None
    E = np.vstack(blocks)
    b = np.concatenate([np.zeros(E.shape[0] - active.size), target])
    delta, *_ = np.linalg.lstsq(E, E @ v - b, rcond=None)
    cand = v - delta
    cand[zero_abs[zero_abs < p]] = 0.0
    bound = 1e-9 * (1.0 + np.max(np.abs(cd.rhs)))
    # an inconsistent active set leaves some equalities unmet
    if np.max(np.abs(E @ cand - b)) > bound or program.violation(cand) > bound:
        return None
    return cand


def _certify(program, v, pattern):
    """Relative residual of the best optimality certificate for ``v``.

    Stationarity asks for ``0 = g + M^T y`` with ``g`` a subgradient of the
    objective at ``v`` and ``y`` a multiplier of the interval constraint
    (nonnegative at the upper bound, nonpositive at the lower bound, zero
    elsewhere). The free parts of ``g`` (terms in the zero pattern) and of
    ``y`` are fitted by bounded least squares; a residual near zero proves
    that ``v`` is optimal.
    """
    cd = program.constraint
    A = program.abs_rows
    w = program.abs_weights
    av = A @ v
    tiny = 1e-12 * (1.0 + np.max(np.abs(v), initial=0.0))
    free_abs = (np.abs(av) <= tiny) & (w > 0)
    fixed = ~free_abs & (w > 0)
    r0 = A[fixed].T @ (w[fixed] * np.sign(av[fixed]))
    cols = [(A[free_abs].T.multiply(w[free_abs])).toarray()]
    lb = [-np.ones(int(free_abs.sum()))]
    ub = [np.ones(int(free_abs.sum()))]
    cone_free = np.zeros(0, dtype=int)
    if program.cone_weights.size:
        G = program.cone_rows
        gv = (G @ v).reshape(-1, 2)
        nrm = np.sqrt((gv**2).sum(axis=1))
        zero = nrm <= tiny
        cw = program.cone_weights
        nz = np.flatnonzero(~zero)
        if nz.size:
            unit = gv[nz] / nrm[nz, None]
            rows = np.column_stack([2 * nz, 2 * nz + 1]).ravel()
            r0 = r0 + G[rows].T @ (unit * cw[nz, None]).ravel()
        cone_free = np.flatnonzero(zero)
        if cone_free.size:
            rows = np.column_stack([2 * cone_free, 2 * cone_free + 1]).ravel()
            cols.append((G[rows].T.multiply(np.repeat(cw[cone_free], 2))).toarray())
            lb.append(-np.ones(rows.size))
            ub.append(np.ones(rows.size))
    # multipliers may only live on rows that are tight at v itself
    mv = cd.apply(v)
    gap = 1e-10 * (1.0 + np.max(np.abs(cd.rhs)))
    at_lo = pattern.at_lo & (np.abs(mv - (cd.rhs - cd.tau)) <= gap)
    at_hi = pattern.at_hi & (np.abs(mv - (cd.rhs + cd.tau)) <= gap)
    active = np.flatnonzero(at_lo | at_hi)
    if active.size:
        # the constraint operator is symmetric, so its rows are its columns
        cols.append(_constraint_rows(cd, active).T)
        lb.append(np.where(at_lo[active], -np.inf, 0.0))
        ub.append(np.where(at_lo[active], 0.0, np.inf))
    C = np.hstack(cols)
    scale = 1.0 + np.max(np.abs(r0), initial=0.0) + np.max(w, initial=0.0)
    if C.shape[1] == 0:
        return float(np.max(np.abs(r0), initial=0.0) / scale)
    fit = lsq_linear(C, -r0, bounds=(np.concatenate(lb), np.concatenate(ub)), method="bvls")
    x = fit.x
    resid = r0 + C @ x
    n_abs_free = int(free_abs.sum())
    if cone_free.size:
        d = x[n_abs_free : n_abs_free + 2 * cone_free.size].reshape(-1, 2)
        excess = np.max(np.sqrt((d**2).sum(axis=1)), initial=0.0) - 1.0
        if excess > 1e-9:
            return np.inf
    return float(np.max(np.abs(resid), initial=0.0) / scale)


def reference_solve(program, iterations=1_000_000):
    """Independent solution of a small program (test oracle).

    Linear programs go to HiGHS through :func:`scipy.optimize.linprog`;
    cone programs are minimized by projected subgradient descent over
    ``w = M v``, which turns the constraint into a box.

    Raises
    ------
    TooLarge
        If the epigraph formulation has more than 40 variables.
    """
    if program.variable_count > REFERENCE_SIZE_CAP:
        raise TooLarge(f"{program.variable_count} variables exceeds the cap of {REFERENCE_SIZE_CAP}")
    if program.zero_is_feasible():
        return _zero_solution(program)
    if program.constraint.scale == 0:
        raise Infeasible("constraint excludes every point")
    if program.is_linear:
        return _reference_lp(program)
    return _reference_subgradient(program, iterations)


def _reference_lp(program):
    from scipy.optimize import linprog

    cd = program.constraint
    p = program.n_vars
    keep = program.abs_weights > 0
    A = program.abs_rows.toarray()[keep]
    w = program.abs_weights[keep]
    k = A.shape[0]
    M = cd.dense_operator()
    I = np.eye(k)
    A_ub = np.block(
        [
            [A, -I],
            [-A, -I],
            [M, np.zeros((p, k))],
            [-M, np.zeros((p, k))],
        ]
    )
    b_ub = np.concatenate([np.zeros(2 * k), cd.rhs + cd.tau, -(cd.rhs - cd.tau)])
    c = np.concatenate([np.zeros(p), w])
    bounds = [(None, None)] * p + [(0, None)] * k
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    v = res.x[:p]
    return Solution(v, program.objective(v), OPTIMAL, 0.0, int(res.nit), {"method": "highs"})


def _reference_subgradient(program, iterations):
    from ._subgradient import box_subgradient

    cd = program.constraint
    M = cd.dense_operator()
    Minv = np.linalg.inv(M)
    A = np.ascontiguousarray(program.abs_rows.toarray() @ Minv)
    G = np.ascontiguousarray(program.cone_rows.toarray() @ Minv)
    lo = cd.rhs - cd.tau
    hi = cd.rhs + cd.tau
    w, fbest = box_subgradient(
        A, program.abs_weights.astype(float), G, program.cone_weights.astype(float), lo, hi, iterations
    )
    v = Minv @ w
    return Solution(v, program.objective(v), OPTIMAL, 0.0, iterations, {"method": "subgradient"})
