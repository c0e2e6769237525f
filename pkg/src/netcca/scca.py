"""Alternating fixed-point fit of structured sparse canonical vectors.

For each component the nonsparse ridge-CCA pair seeds an outer loop: both
canonical vectors are re-solved from the previous estimates as graph-
penalized programs with an l-infinity constraint, normalized to unit
length, and the canonical correlation is recomputed. Later components are
fitted after projecting the data off the earlier canonical vectors.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import FeatureGraph, validate
from .linalg import DataMatrix, RegCovOperator, as_array, deflate, nonsparse_init, standardize
from .penalty import ConstraintData, PenaltyConfig, compile_subproblem
from .solver import SolverSettings, solve

log = logging.getLogger(__name__)

SELECTION_THRESHOLD = 1e-8
UPDATES = ("jacobi", "gauss-seidel")


@dataclass(frozen=True)
class FitConfig:
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    tau_x: float = 0.1
    tau_y: float = 0.1
    max_outer_iterations: int = 20
    convergence_tol: float = 1e-4
    n_components: int = 1
    solver: SolverSettings = field(default_factory=SolverSettings)
    # "jacobi": both vectors are updated from the previous pair;
    # "gauss-seidel": the beta update already sees the new alpha.
    update: str = "jacobi"

    def __post_init__(self):
        if self.tau_x < 0 or self.tau_y < 0:
            raise ValueError("tau_x and tau_y must be nonnegative")
        if self.n_components < 1:
            raise ValueError("n_components must be at least 1")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.update not in UPDATES:
            raise ValueError(f"update must be one of {UPDATES}")

    def with_taus(self, tau_x, tau_y):
        return replace(self, tau_x=float(tau_x), tau_y=float(tau_y))


@dataclass
class CcaComponent:
    alpha: np.ndarray
    beta: np.ndarray
    rho: float
    iterations: int
    converged: bool
    trivial: bool = False
    rho_history: list = field(default_factory=list)

    def selected_x(self, threshold=SELECTION_THRESHOLD):
        return np.flatnonzero(np.abs(self.alpha) > threshold)

    def selected_y(self, threshold=SELECTION_THRESHOLD):
        return np.flatnonzero(np.abs(self.beta) > threshold)


@dataclass
class CcaModel:
    components: list
    config: FitConfig
    x_means: np.ndarray
    x_sds: np.ndarray
    y_means: np.ndarray
    y_sds: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def alphas(self):
        return np.column_stack([c.alpha for c in self.components])

    @property
    def betas(self):
        return np.column_stack([c.beta for c in self.components])

    @property
    def rhos(self):
        return np.array([c.rho for c in self.components])

    @property
    def selected_x(self):
        return [c.selected_x() for c in self.components]

    @property
    def selected_y(self):
        return [c.selected_y() for c in self.components]

    @property
    def trivial(self):
        return bool(self.components) and all(c.trivial for c in self.components)

    def scores(self, X_raw, Y_raw):
        """Canonical variables of new raw samples, using the training scaling."""
        x = (np.asarray(X_raw, dtype=float) - self.x_means) / self.x_sds
        y = (np.asarray(Y_raw, dtype=float) - self.y_means) / self.y_sds
        return x @ self.alphas, y @ self.betas


def canonical_correlation(X, Y, alpha, beta):
    """Pearson correlation of ``X alpha`` and ``Y beta`` (0 if either is constant)."""
    a = as_array(X) @ np.asarray(alpha, dtype=float)
    b = as_array(Y) @ np.asarray(beta, dtype=float)
    a = a - a.mean()
    b = b - b.mean()
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    if na <= 1e-13 * scale * np.sqrt(a.size) or nb <= 1e-13 * scale * np.sqrt(b.size):
        return 0.0
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _normalize(v):
    n = np.linalg.norm(v)
    if n == 0:
        return np.zeros_like(v), True
    return v / n, False


def _aligned_change(new, old):
    if new @ old < 0:
        new = -new
    return float(np.max(np.abs(new - old), initial=0.0))


class _Side:
    """Data needed to build one side's subproblems."""

    def __init__(self, own, other, graph, variant, penalty, op=None):
        self.own = own
        self.other = other
        self.n = own.shape[0]
        self.graph = graph
        self.variant = variant
        self.penalty = penalty
        self.op = op or RegCovOperator(own)
        self.warm = None
        self.warm_dual = None

    def rhs(self, partner):
        c = self.own.T @ (self.other @ partner) / (self.n - 1)
        if self.variant == "B":
            c = self.op.inv(c)
        return c

    def program(self, partner, rho, tau):
        cov = self.op if self.variant == "A" else None
        cd = ConstraintData(self.rhs(partner), float(rho), float(tau), cov)
        return compile_subproblem(self.penalty, self.graph, cd)

    def update(self, partner, rho, tau, settings):
        sol = solve(self.program(partner, rho, tau), settings, self.warm, self.warm_dual)
        self.warm = sol.primal
        self.warm_dual = sol.info.get("dual")
        return sol


def _check_graph(graph, p, label):
    if graph is None:
        return FeatureGraph.empty(p)
    report = validate(graph, p)
    if not report.ok:
        raise ValueError(f"{label} graph is invalid: {report.problems}")
    return graph


def fit_component(X, Y, graph_x, graph_y, cfg, init=None, tau_selector=None, op_x=None, op_y=None):
    """Fit one structured sparse canonical pair.

    Parameters
    ----------
    X, Y : array-like or DataMatrix
        Centered (typically standardized, possibly deflated) data.
    graph_x, graph_y : FeatureGraph or None
        None means no edges, i.e. a plain l1 penalty.
    cfg : FitConfig
    init : NonsparseTriple, optional
        Starting pair; defaults to the leading ridge-CCA pair of (X, Y).
    tau_selector : callable, optional
        ``tau_selector(t, alpha, beta, rho) -> (tau_x, tau_y)`` is called at
        the start of every outer iteration ``t`` to pick the tuning
        parameters; without it ``cfg.tau_x`` and ``cfg.tau_y`` are used.
    """
    x, y = as_array(X), as_array(Y)
    p, q = x.shape[1], y.shape[1]
    gx = _check_graph(graph_x, p, "X")
    gy = _check_graph(graph_y, q, "Y")
    if init is None:
        init = nonsparse_init(x, y, 1, op_x, op_y)
    pen = cfg.penalty
    sx = _Side(x, y, gx, pen.constraint, pen, op_x)
    sy = _Side(y, x, gy, pen.constraint, pen, op_y)

    alpha, beta, rho = init.alpha.copy(), init.beta.copy(), float(init.rho)
    history = []
    converged = False
    trivial = False
    t = 0
    for t in range(1, cfg.max_outer_iterations + 1):
        tau_x, tau_y = (cfg.tau_x, cfg.tau_y) if tau_selector is None else tau_selector(t, alpha, beta, rho)
        a_new, a_zero = _normalize(sx.update(beta, rho, tau_x, cfg.solver).primal)
        partner = a_new if cfg.update == "gauss-seidel" else alpha
        if cfg.update == "gauss-seidel" and a_zero:
            b_new, b_zero = np.zeros(q), True
        else:
            b_new, b_zero = _normalize(sy.update(partner, rho, tau_y, cfg.solver).primal)
        if a_zero or b_zero:
            rho_new = 0.0
        else:
            rho_new = canonical_correlation(x, y, a_new, b_new)
        history.append(rho_new)
        change = max(_aligned_change(a_new, alpha), _aligned_change(b_new, beta))
        alpha, beta, rho = a_new, b_new, rho_new
        if a_zero or b_zero:
            # a zero partner zeroes the other side's constraint vector, so the
            # next update would return zero as well
            alpha, beta = np.zeros(p), np.zeros(q)
            trivial = True
            break
        if change <= cfg.convergence_tol:
            converged = True
            break
    if not trivial and np.any(alpha):
        k = np.argmax(np.abs(alpha))
        if alpha[k] < 0:
            alpha, beta = -alpha, -beta
    return CcaComponent(alpha, beta, float(rho), t, converged, trivial, history)


def fit(X, Y, graph_x=None, graph_y=None, cfg=None, tau_selector=None):
    """Fit ``cfg.n_components`` structured sparse canonical pairs.

    Raw arrays are standardized first; DataMatrix inputs are used as given.
    Component ``k >= 2`` is fitted on data projected off the earlier
    canonical vectors. Fitting stops early, with a note in
    ``model.warnings``, when a component comes back trivial.
    """
    cfg = cfg or FitConfig()
    Xd = X if isinstance(X, DataMatrix) else standardize(X)
    Yd = Y if isinstance(Y, DataMatrix) else standardize(Y)
    n, p = Xd.shape
    q = Yd.shape[1]
    if Yd.shape[0] != n:
        from .exceptions import DimensionMismatch

        raise DimensionMismatch(f"row count mismatch: {n} vs {Yd.shape[0]}")
    kmax = min(n - 1, p, q)
    if cfg.n_components > kmax:
        raise ValueError(f"n_components={cfg.n_components} exceeds min(n-1, p, q) = {kmax}")
    components = []
    notes = []
    x_cur, y_cur = Xd.values, Yd.values
    for k in range(1, cfg.n_components + 1):
        if k >= 2:
            A = np.column_stack([c.alpha for c in components])
            B = np.column_stack([c.beta for c in components])
            x_cur = deflate(Xd, A).values
            y_cur = deflate(Yd, B).values
        comp = fit_component(x_cur, y_cur, graph_x, graph_y, cfg, tau_selector=tau_selector)
        components.append(comp)
        if comp.trivial:
            msg = f"component {k} is trivial (tau too large); stopping"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            break
        if not comp.converged:
            notes.append(f"component {k} did not converge in {comp.iterations} outer iterations")
    return CcaModel(
        components, cfg, Xd.column_means, Xd.column_sds, Yd.column_means, Yd.column_sds, notes
    )
