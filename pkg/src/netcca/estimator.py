"""scikit-learn style estimators wrapping the structured sparse CCA fit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .penalty import PenaltyConfig
from .scca import FitConfig, fit
from .solver import SolverSettings
from .tuning import cross_search, geometric_grid, make_cv_plan, per_iteration_selector, tau_max


class NetworkSCCA(TransformerMixin, BaseEstimator):
    """Structured sparse CCA at fixed tuning parameters.

    Parameters
    ----------
    penalty : {"fused", "grouped"}
        Graph penalty family.
    constraint : {"A", "B"}
        Form of the l-infinity constraint.
    eta : float in [0, 1)
        Weight of the l1 term on unconnected features.
    gamma : float > 1
        Exponent of the grouped penalty.
    tau_x, tau_y : float
        Constraint radii; larger values give sparser vectors.
    n_components : int
        Number of canonical pairs.
    graph_x, graph_y : FeatureGraph or None
        Prior networks; None means no edges.
    max_outer_iterations : int
    tol : float
        Convergence tolerance of the outer loop.
    update : {"jacobi", "gauss-seidel"}
        Whether the beta update uses the previous or the new alpha.

    Attributes
    ----------
    x_weights_, y_weights_ : ndarray of shape (p, K), (q, K)
        Canonical vectors in the standardized scale.
    correlations_ : ndarray of shape (K,)
    model_ : CcaModel
    n_features_in_ : int
    """

    def __init__(
        self,
        penalty="fused",
        constraint="B",
        eta=0.5,
        gamma=2.0,
        tau_x=0.1,
        tau_y=0.1,
        n_components=1,
        graph_x=None,
        graph_y=None,
        max_outer_iterations=20,
        tol=1e-4,
        update="jacobi",
    ):
        self.penalty = penalty
        self.constraint = constraint
        self.eta = eta
        self.gamma = gamma
        self.tau_x = tau_x
        self.tau_y = tau_y
        self.n_components = n_components
        self.graph_x = graph_x
        self.graph_y = graph_y
        self.max_outer_iterations = max_outer_iterations
        self.tol = tol
        self.update = update

    def _config(self, tau_x=None, tau_y=None):
        return FitConfig(
            PenaltyConfig(self.penalty, self.constraint, self.eta, self.gamma),
            self.tau_x if tau_x is None else tau_x,
            self.tau_y if tau_y is None else tau_y,
            self.max_outer_iterations,
            self.tol,
            self.n_components,
            SolverSettings(),
            self.update,
        )

    def _check_xy(self, X, Y):
        X = check_array(X, dtype=np.float64, ensure_min_samples=3)
        Y = check_array(Y, dtype=np.float64, ensure_min_samples=3)
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"row count mismatch: {X.shape[0]} vs {Y.shape[0]}")
        return X, Y

    def _store(self, model, X):
        self.model_ = model
        self.x_weights_ = model.alphas
        self.y_weights_ = model.betas
        self.correlations_ = model.rhos
        self.n_features_in_ = X.shape[1]
        self.n_features_y_ = model.y_means.size
        return self

    def fit(self, X, Y):
        X, Y = self._check_xy(X, Y)
        return self._store(fit(X, Y, self.graph_x, self.graph_y, self._config()), X)

    def transform(self, X, Y=None):
        """Canonical variables; returns ``(U, V)`` when ``Y`` is given."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        U = (X - self.model_.x_means) / self.model_.x_sds @ self.x_weights_
        if Y is None:
            return U
        Y = check_array(Y, dtype=np.float64)
        if Y.shape[1] != self.n_features_y_:
            raise ValueError(f"Y has {Y.shape[1]} features, expected {self.n_features_y_}")
        V = (Y - self.model_.y_means) / self.model_.y_sds @ self.y_weights_
        return U, V

    def fit_transform(self, X, Y):
        return self.fit(X, Y).transform(X, Y)

    def score(self, X, Y):
        """Correlation of the first pair of canonical variables on (X, Y)."""
        U, V = self.transform(X, Y)
        u, v = U[:, 0] - U[:, 0].mean(), V[:, 0] - V[:, 0].mean()
        den = np.sqrt((u @ u) * (v @ v))
        return float(u @ v / den) if den > 0 else 0.0


class NetworkSCCACV(NetworkSCCA):
    """Structured sparse CCA with cross-validated tuning parameters.

    Geometric grids of ``grid_size`` points span ``grid_low * tau_max`` to
    ``tau_max`` on each side unless ``tau_x_grid`` / ``tau_y_grid`` are
    given.

    Additional attributes
    ---------------------
    tau_ : tuple of float
        Selected ``(tau_x, tau_y)``; with per-iteration tuning, the pair
        chosen at the last outer step.
    cv_results_ : CvResult or list of CvResult
    """

    def __init__(
        self,
        penalty="fused",
        constraint="B",
        eta=0.5,
        gamma=2.0,
        n_components=1,
        graph_x=None,
        graph_y=None,
        folds=5,
        grid_size=8,
        grid_low=0.01,
        tau_x_grid=None,
        tau_y_grid=None,
        tuning_mode="once",
        random_state=0,
        n_jobs=1,
        max_outer_iterations=20,
        tol=1e-4,
        update="jacobi",
    ):
        super().__init__(
            penalty, constraint, eta, gamma, None, None, n_components, graph_x, graph_y,
            max_outer_iterations, tol, update,
        )
        self.folds = folds
        self.grid_size = grid_size
        self.grid_low = grid_low
        self.tau_x_grid = tau_x_grid
        self.tau_y_grid = tau_y_grid
        self.tuning_mode = tuning_mode
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, Y):
        from .linalg import standardize

        X, Y = self._check_xy(X, Y)
        if self.tuning_mode not in ("once", "per-iteration"):
            raise ValueError("tuning_mode must be 'once' or 'per-iteration'")
        Xd, Yd = standardize(X), standardize(Y)
        gx, gy = self.tau_x_grid, self.tau_y_grid
        if gx is None or gy is None:
            tx, ty = tau_max(Xd, Yd, constraint=self.constraint)
            gx = geometric_grid(tx, self.grid_size, self.grid_low) if gx is None else gx
            gy = geometric_grid(ty, self.grid_size, self.grid_low) if gy is None else gy
        plan = make_cv_plan(X.shape[0], self.folds, gx, gy, seed=self.random_state)
        cfg = self._config(0.0, 0.0)
        if self.tuning_mode == "once":
            res = cross_search(X, Y, self.graph_x, self.graph_y, cfg, plan, self.n_jobs)
            self.cv_results_ = res
            self.tau_ = res.tau_opt
            model = fit(Xd, Yd, self.graph_x, self.graph_y, cfg.with_taus(*res.tau_opt))
        else:
            log = []
            sel = per_iteration_selector(X, Y, self.graph_x, self.graph_y, cfg, plan, self.n_jobs, log)
            model = fit(Xd, Yd, self.graph_x, self.graph_y, cfg, tau_selector=sel)
            self.cv_results_ = log
            last = next((r for r in reversed(log) if r is not None), None)
            self.tau_ = last.tau_opt if last is not None else (plan.tau_x_grid[0], plan.tau_y_grid[0])
        return self._store(model, X)
