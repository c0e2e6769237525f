"""V-fold cross-validated choice of the tuning parameters ``(tau_x, tau_y)``.

The score of a pair is the gap between the mean absolute training and mean
absolute held-out canonical correlations of the fold fits. It is minimized
by a cross search: ``tau_x`` is scanned with ``tau_y`` fixed at the middle
of its grid, then ``tau_y`` is scanned at the chosen ``tau_x``.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .exceptions import AllDegenerate, DegenerateGrid, NetccaError
from .linalg import NonsparseTriple, RegCovOperator, as_array, nonsparse_init, standardize
from .scca import FitConfig, canonical_correlation, fit, fit_component

log = logging.getLogger(__name__)

TUNING_MODES = ("once", "per-iteration")
TIE_TOLERANCE = 1e-12


def n_jobs_from_env(default=1):
    """Worker count from ``NETCCA_THREADS`` (``default`` if unset)."""
    raw = os.environ.get("NETCCA_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"NETCCA_THREADS must be a positive integer, got {raw!r}") from None


@dataclass(frozen=True)
class CvPlan:
    """Fold assignment and tuning grids.

    Build with :func:`make_cv_plan`, which checks the invariants.
    """

    folds: int
    tau_x_grid: tuple
    tau_y_grid: tuple
    seed: int
    assignment: np.ndarray

    def split(self, v):
        """Boolean masks ``(train, test)`` of fold ``v``."""
        test = self.assignment == v
        return ~test, test


def make_cv_plan(n, folds=5, tau_x_grid=(1.0,), tau_y_grid=(1.0,), seed=0):
    """Randomly split ``n`` rows into ``folds`` groups whose sizes differ by at most one."""
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if folds > n:
        raise ValueError(f"folds={folds} exceeds the number of samples n={n}")
    if n // folds < 2:
        raise ValueError(f"n={n} is too small for {folds} folds of at least 2 samples")
    gx = tuple(sorted(float(t) for t in tau_x_grid))
    gy = tuple(sorted(float(t) for t in tau_y_grid))
    if not gx or not gy:
        raise ValueError("tau grids must be nonempty")
    if min(gx + gy) < 0:
        raise ValueError("tau grids must be nonnegative")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.arange(n) % folds
    return CvPlan(folds, gx, gy, seed, assignment)


def tau_max(X, Y, init=None, constraint="B", op_x=None, op_y=None):
    """Smallest ``(tau_x, tau_y)`` at which the zero vector solves the first update.

    This is the l-infinity norm of the constraint's right-hand side at the
    nonsparse starting pair.
    """
    x, y = as_array(X), as_array(Y)
    n = x.shape[0]
    if init is None:
        init = nonsparse_init(x, y, 1, op_x, op_y)
    cx = x.T @ (y @ init.beta) / (n - 1)
    cy = y.T @ (x @ init.alpha) / (n - 1)
    if constraint == "B":
        cx = (op_x or RegCovOperator(x)).inv(cx)
        cy = (op_y or RegCovOperator(y)).inv(cy)
    return float(np.max(np.abs(cx), initial=0.0)), float(np.max(np.abs(cy), initial=0.0))


def geometric_grid(top, size, low_ratio=0.01):
    if size < 2:
        raise ValueError("grid size must be at least 2")
    if not top > 0:
        raise DegenerateGrid("tau_max is 0: the cross-covariance vanishes at the starting pair")
    return tuple(np.geomspace(low_ratio * top, top, size))


def default_tau_grid(X, Y, init=None, size=8, constraint="B", low_ratio=0.01):
    """Geometric grids from ``0.01 * tau_max`` to ``tau_max`` for each side.

    Returns
    -------
    (tuple, tuple)
        Strictly increasing positive grids for ``tau_x`` and ``tau_y``.

    Raises
    ------
    DegenerateGrid
        If ``tau_max`` is zero on either side.
    """
    tx, ty = tau_max(X, Y, init, constraint)
    return geometric_grid(tx, size, low_ratio), geometric_grid(ty, size, low_ratio)


@dataclass
class CvPoint:
    """Cross-validation outcome at one ``(tau_x, tau_y)``.

    ``train`` and ``test`` hold per-fold, per-component correlations
    (NaN for failed folds). The point is degenerate when any surviving
    fold produced a trivial fit: a zero fold has train and test
    correlations of 0 and would pull the score toward 0.
    """

    tau_x: float
    tau_y: float
    score: float
    train: np.ndarray
    test: np.ndarray
    trivial: np.ndarray
    failed: list = field(default_factory=list)

    @property
    def degenerate(self):
        ok = ~np.isnan(self.train[:, 0])
        return not ok.any() or bool(self.trivial[ok].any())


@dataclass
class CvResult:
    points: list
    tau_opt: tuple
    phase_one: list
    phase_two: list

    def table(self):
        """One dict per evaluated point, in evaluation order."""
        rows = []
        for pt in self.points:
            rows.append(
                {
                    "tau_x": pt.tau_x,
                    "tau_y": pt.tau_y,
                    "score": pt.score,
                    "degenerate": pt.degenerate,
                    "mean_train": float(np.nanmean(np.abs(pt.train[:, 0]))) if not pt.degenerate else 0.0,
                    "mean_test": float(np.nanmean(np.abs(pt.test[:, 0]))) if not pt.degenerate else 0.0,
                    "failed_folds": len(pt.failed),
                }
            )
        return rows


class _Fold:
    """Training/test split with its scaling and operators cached."""

    def __init__(self, X, Y, train, test):
        self.failure = None
        try:
            self.Xtr = standardize(X[train])
            self.Ytr = standardize(Y[train])
        except NetccaError as exc:
            self.failure = exc
            return
        self.Xte = self.Xtr.apply(X[test])
        self.Yte = self.Ytr.apply(Y[test])
        self.op_x = RegCovOperator(self.Xtr.values)
        self.op_y = RegCovOperator(self.Ytr.values)
        self._init = None

    @property
    def init(self):
        if self._init is None:
            self._init = nonsparse_init(self.Xtr.values, self.Ytr.values, 1, self.op_x, self.op_y)
        return self._init


def _fit_fold(fold, gX, gY, cfg, start=None):
    """Fold fit; ``start`` switches to a single outer step from that pair."""
    if start is not None:
        one = FitConfig(cfg.penalty, cfg.tau_x, cfg.tau_y, 1, cfg.convergence_tol, 1, cfg.solver, cfg.update)
        comp = fit_component(fold.Xtr.values, fold.Ytr.values, gX, gY, one, start, None, fold.op_x, fold.op_y)
        return [comp]
    if cfg.n_components == 1:
        comp = fit_component(fold.Xtr.values, fold.Ytr.values, gX, gY, cfg, fold.init, None, fold.op_x, fold.op_y)
        return [comp]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit(fold.Xtr, fold.Ytr, gX, gY, cfg).components


def _evaluate(folds, gX, gY, cfg, tau_x, tau_y, start=None):
    cfg = cfg.with_taus(tau_x, tau_y)
    K = 1 if start is not None else cfg.n_components
    V = len(folds)
    train = np.full((V, K), np.nan)
    test = np.full((V, K), np.nan)
    trivial = np.zeros(V, dtype=bool)
    failed = []
    for v, fold in enumerate(folds):
        if fold.failure is not None:
            failed.append((v, str(fold.failure)))
            continue
        try:
            comps = _fit_fold(fold, gX, gY, cfg, start)
        except NetccaError as exc:
            failed.append((v, str(exc)))
            continue
        trivial[v] = comps[0].trivial
        for k in range(K):
            if k < len(comps) and not comps[k].trivial:
                c = comps[k]
                train[v, k] = canonical_correlation(fold.Xtr.values, fold.Ytr.values, c.alpha, c.beta)
                test[v, k] = canonical_correlation(fold.Xte, fold.Yte, c.alpha, c.beta)
            else:
                train[v, k] = test[v, k] = 0.0
    if failed:
        warnings.warn(f"{len(failed)} fold fit(s) failed at tau=({tau_x:.4g}, {tau_y:.4g})", RuntimeWarning)
    ok = ~np.isnan(train[:, 0])
    if ok.any():
        gaps = np.abs(np.mean(np.abs(train[ok]), axis=0) - np.mean(np.abs(test[ok]), axis=0))
        score = float(np.mean(gaps))
    else:
        score = np.inf
    return CvPoint(float(tau_x), float(tau_y), score, train, test, trivial, failed)


def _make_folds(X, Y, plan):
    x, y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if x.shape[0] != plan.assignment.size or y.shape[0] != plan.assignment.size:
        raise ValueError("plan was built for a different number of rows")
    return [_Fold(x, y, *plan.split(v)) for v in range(plan.folds)]


def cv_score(X, Y, gX, gY, cfg, tau_x, tau_y, plan):
    """Cross-validation score of one tuning pair.

    ``X`` and ``Y`` are raw data; each training part is standardized on its
    own and the held-out part is scaled with the training means and
    standard deviations. With several components the per-component gaps
    are averaged.

    Returns
    -------
    CvPoint
        ``score`` is the gap between mean absolute training and held-out
        correlations; it is 0 for a degenerate (all-trivial) point.
    """
    return _evaluate(_make_folds(X, Y, plan), gX, gY, cfg, tau_x, tau_y)


def _argmin(points):
    """Lowest score among nondegenerate points, ties to the larger tau."""
    live = [pt for pt in points if not pt.degenerate and np.isfinite(pt.score)]
    if not live:
        return None
    best = min(pt.score for pt in live)
    tied = [pt for pt in live if pt.score <= best + TIE_TOLERANCE]
    return max(tied, key=lambda pt: (pt.tau_x, pt.tau_y))


def _scan(folds, gX, gY, cfg, pairs, n_jobs, start=None):
    if n_jobs == 1 or len(pairs) == 1:
        return [_evaluate(folds, gX, gY, cfg, tx, ty, start) for tx, ty in pairs]
    return Parallel(n_jobs=n_jobs, prefer="processes")(
        delayed(_evaluate)(folds, gX, gY, cfg, tx, ty, start) for tx, ty in pairs
    )


def _cross_search(folds, gX, gY, cfg, plan, n_jobs, start=None):
    gx, gy = plan.tau_x_grid, plan.tau_y_grid
    mid_y = gy[(len(gy) - 1) // 2]
    phase_one = _scan(folds, gX, gY, cfg, [(tx, mid_y) for tx in gx], n_jobs, start)
    first = _argmin(phase_one)
    if first is None:
        raise AllDegenerate("every tau_x fit at the middle tau_y was trivial")
    rest = [(first.tau_x, ty) for ty in gy if ty != mid_y]
    phase_two = _scan(folds, gX, gY, cfg, rest, n_jobs, start) if rest else []
    by_y = {pt.tau_y: pt for pt in phase_two}
    by_y[mid_y] = first
    phase_two = [by_y[ty] for ty in gy]
    second = _argmin(phase_two)
    return CvResult(phase_one + [pt for pt in phase_two if pt is not first], (second.tau_x, second.tau_y), phase_one, phase_two)


def cross_search(X, Y, gX, gY, cfg, plan, n_jobs=1):
    """Pick ``(tau_x, tau_y)`` by the two-phase cross search.

    Parameters
    ----------
    X, Y : array-like
        Raw data (standardized inside each fold).
    gX, gY : FeatureGraph or None
    cfg : FitConfig
        Everything but the taus is used for the fold fits.
    plan : CvPlan
    n_jobs : int
        Grid points evaluated in parallel.

    Raises
    ------
    AllDegenerate
        If every evaluated point is trivial in every fold.
    """
    return _cross_search(_make_folds(X, Y, plan), gX, gY, cfg, plan, n_jobs)


def per_iteration_selector(X, Y, gX, gY, cfg, plan, n_jobs=1, log_to=None):
    """Build a ``tau_selector`` that reruns the cross search at every outer step.

    Fold fits take a single outer step from the current full-data iterate,
    so each iteration's tuning pair is chosen for the step about to be
    taken. ``log_to`` (a list) collects the :class:`CvResult` of each step.
    """
    folds = _make_folds(X, Y, plan)

    def select(t, alpha, beta, rho):
        start = NonsparseTriple(alpha, beta, rho, rho)
        try:
            res = _cross_search(folds, gX, gY, cfg, plan, n_jobs, start)
        except AllDegenerate:
            if log_to is not None:
                log_to.append(None)
            tx, ty = plan.tau_x_grid[0], plan.tau_y_grid[0]
            log.warning("outer step %d: every grid point trivial; using the smallest taus", t)
            return tx, ty
        if log_to is not None:
            log_to.append(res)
        return res.tau_opt

    return select
