"""Simulation scenarios, selection metrics and Monte-Carlo studies.

Every scenario shares the same covariance layout: the first 36 variables of
each block form six stars (one hub and five leaves, hub-leaf correlation
0.7, leaf-leaf 0.49) and the remaining variables are independent
singletons. Scenarios differ in which stars carry the cross-correlation:

1. all six stars, canonical correlation 0.9;
2. the first two stars, canonical correlation 0.9;
3. two orthogonal canonical pairs with correlations 0.9 and 0.6;
4. scenario 2 with the twelve signal variables moved to random positions
   while the fitter keeps the original (now wrong) graph.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .exceptions import NotPositiveSemidefinite
from .graph import FeatureGraph

log = logging.getLogger(__name__)

N_STARS = 6
STAR_SIZE = 6
BLOCK = N_STARS * STAR_SIZE
HUB_LEAF = 0.7
LEAF_LEAF = 0.49
SCENARIOS = (1, 2, 3, 4)


@dataclass(frozen=True)
class ScenarioSpec:
    """Dimensions and seed of one simulation scenario.

    ``seed`` only matters for scenario 4, where it fixes the positions of
    the signal variables.
    """

    scenario: int
    p: int = 100
    q: int = 100
    n: int = 80
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario}")
        if self.p < BLOCK or self.q < BLOCK:
            raise ValueError(f"p and q must be at least {BLOCK}")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    @property
    def rhos(self):
        return (0.9, 0.6) if self.scenario == 3 else (0.9,)


@dataclass
class GroundTruth:
    spec: ScenarioSpec
    sigma: np.ndarray
    alpha: np.ndarray  # p x k
    beta: np.ndarray  # q x k
    rhos: tuple
    graph_x: FeatureGraph
    graph_y: FeatureGraph
    perm_x: np.ndarray = None
    perm_y: np.ndarray = None

    @property
    def p(self):
        return self.alpha.shape[0]

    @property
    def q(self):
        return self.beta.shape[0]

    @property
    def n_components(self):
        return self.alpha.shape[1]

    def support_x(self, k=0):
        return np.flatnonzero(self.alpha[:, k])

    def support_y(self, k=0):
        return np.flatnonzero(self.beta[:, k])

    @property
    def sigma_xx(self):
        return self.sigma[: self.p, : self.p]

    @property
    def sigma_yy(self):
        return self.sigma[self.p :, self.p :]

    @property
    def sigma_xy(self):
        return self.sigma[: self.p, self.p :]


def star_graph(dim):
    """Six hub-and-five-leaf stars over the first 36 of ``dim`` nodes."""
    edges = [(s * STAR_SIZE, s * STAR_SIZE + j) for s in range(N_STARS) for j in range(1, STAR_SIZE)]
    return FeatureGraph.from_edges(dim, edges)


def network_covariance(dim):
    block = np.full((STAR_SIZE, STAR_SIZE), LEAF_LEAF)
    block[0, :] = block[:, 0] = HUB_LEAF
    np.fill_diagonal(block, 1.0)
    sigma = np.eye(dim)
    for s in range(N_STARS):
        lo = s * STAR_SIZE
        sigma[lo : lo + STAR_SIZE, lo : lo + STAR_SIZE] = block
    return sigma


def _pattern(dim, hubs, offset=0):
    """Hub value ``h`` followed by five leaves ``h / sqrt(5)`` for every star."""
    v = np.zeros(dim)
    for s, h in enumerate(hubs):
        lo = offset + s * STAR_SIZE
        v[lo] = h
        v[lo + 1 : lo + STAR_SIZE] = h / math.sqrt(5)
    return v


def _normalized(v, sigma):
    return v / math.sqrt(v @ sigma @ v)


def _patterns(scenario, p, q):
    if scenario == 1:
        hubs = (-20, 20, -17, 17, -10, 10)
        return [_pattern(p, hubs)], [_pattern(q, hubs)]
    if scenario in (2, 4):
        return [_pattern(p, (-20, 20))], [_pattern(q, (-20, 20))]
    a1 = _pattern(p, (-20, 20, -17, 17))
    a2 = _pattern(p, (17, -17), offset=24)
    b1 = _pattern(q, (-20, 20, -17))
    b2 = _pattern(q, (17, -10, 10), offset=18)
    return [a1, a2], [b1, b2]


def _placement(dim, rng):
    """Permutation sending the 12 signal variables to random positions.

    ``perm[k]`` is the scenario-two variable stored at position ``k``; the
    remaining variables fill the free positions in their original order.
    """
    targets = np.sort(rng.choice(dim, size=12, replace=False))
    signal_at = rng.permutation(targets)
    perm = np.full(dim, -1)
    perm[signal_at] = np.arange(12)
    perm[perm < 0] = np.arange(12, dim)
    return perm


def build_scenario(spec):
    """Assemble the joint covariance, true vectors and prior graphs."""
    p, q = spec.p, spec.q
    sxx = network_covariance(p)
    syy = network_covariance(q)
    a_cols, b_cols = _patterns(spec.scenario, p, q)
    A = np.column_stack([_normalized(a, sxx) for a in a_cols])
    B = np.column_stack([_normalized(b, syy) for b in b_cols])
    D = np.diag(spec.rhos)
    sxy = sxx @ A @ D @ B.T @ syy
    perm_x = perm_y = None
    if spec.scenario == 4:
        rng = np.random.default_rng(spec.seed)
        perm_x = _placement(p, rng)
        perm_y = _placement(q, rng)
        sxx = sxx[np.ix_(perm_x, perm_x)]
        syy = syy[np.ix_(perm_y, perm_y)]
        sxy = sxy[np.ix_(perm_x, perm_y)]
        A = A[perm_x]
        B = B[perm_y]
    sigma = np.block([[sxx, sxy], [sxy.T, syy]])
    sigma = (sigma + sigma.T) / 2
    lam_min = linalg.eigvalsh(sigma, subset_by_index=[0, 0])[0]
    if lam_min < -1e-8:
        raise NotPositiveSemidefinite(f"minimum eigenvalue {lam_min:.3g}")
    # the fitter always receives the nominal star graph, also in scenario 4
    return GroundTruth(spec, sigma, A, B, spec.rhos, star_graph(p), star_graph(q), perm_x, perm_y)


def population_canonical_correlations(sigma, p, k=None):
    """Canonical correlations of a joint covariance by a dense eigen-solve."""
    sxx, syy, sxy = sigma[:p, :p], sigma[p:, p:], sigma[:p, p:]
    lx = linalg.cholesky(sxx, lower=True)
    ly = linalg.cholesky(syy, lower=True)
    k_mat = linalg.solve_triangular(lx, linalg.solve_triangular(ly, sxy.T, lower=True).T, lower=True)
    s = linalg.svdvals(k_mat)
    return s if k is None else s[:k]


def _sqrt_factor(sigma):
    lam, vec = linalg.eigh(sigma)
    return (vec * np.sqrt(np.clip(lam, 0, None))) @ vec.T


def sample_mvn(truth, n, seed):
    """Draw ``n`` rows of (X, Y) from N(0, Sigma) with a seeded generator."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, truth.sigma.shape[0]))
    data = z @ _sqrt_factor(truth.sigma)
    return data[:, : truth.p], data[:, truth.p :]


@dataclass(frozen=True)
class SelectionMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    sensitivity: float
    specificity: float
    mcc: float


def selection_metrics(selected, support, total):
    """Sensitivity, specificity and Matthews correlation of a selected set.

    Ratios with an empty denominator are reported as 0.
    """
    sel = np.zeros(total, dtype=bool)
    tru = np.zeros(total, dtype=bool)
    sel[np.asarray(selected, dtype=int)] = True
    tru[np.asarray(support, dtype=int)] = True
    tp = int(np.sum(sel & tru))
    fp = int(np.sum(sel & ~tru))
    tn = int(np.sum(~sel & ~tru))
    fn = int(np.sum(~sel & tru))
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    denom = math.sqrt(float(tp + fn) * (tn + fp) * (tp + fp) * (tn + fn))
    mcc = (tp * tn - fp * fn) / denom if denom else 0.0
    return SelectionMetrics(tp, fp, tn, fn, sens, spec, mcc)


@dataclass(frozen=True)
class MethodConfig:
    """One fitting procedure of a study.

    ``use_graph=False`` hands the fitter empty graphs, which turns both
    penalties into a plain l1 penalty (the ablation baseline). Tuning uses
    ``folds``-fold cross validation over geometric grids of ``grid_size``
    points from ``grid_low * tau_max`` to ``tau_max``.
    """

    name: str
    family: str = "fused"
    constraint: str = "B"
    eta: float = 0.5
    gamma: float = 2.0
    use_graph: bool = True
    folds: int = 5
    grid_size: int = 6
    grid_low: float = 0.2
    tuning_mode: str = "once"
    update: str = "jacobi"

    def penalty(self):
        from .penalty import PenaltyConfig

        return PenaltyConfig(self.family, self.constraint, self.eta, self.gamma)


def default_methods(family="fused", constraint="B", eta=0.5, gamma=2.0, ablation=True, **tuning):
    """The structured method plus, optionally, its empty-graph l1 ablation."""
    name = f"{family}_{constraint}"
    out = [MethodConfig(name, family, constraint, eta, gamma, True, **tuning)]
    if ablation:
        out.append(MethodConfig(f"l1_{constraint}", family, constraint, eta, gamma, False, **tuning))
    return out


ROW_COLUMNS = (
    "replicate",
    "method",
    "side",
    "component",
    "tp",
    "fp",
    "tn",
    "fn",
    "sensitivity",
    "specificity",
    "mcc",
    "rhoHat",
)
SUMMARY_COLUMNS = (
    "method",
    "side",
    "component",
    "replicates",
    "sensitivity_mean",
    "sensitivity_sd",
    "specificity_mean",
    "specificity_sd",
    "mcc_mean",
    "mcc_sd",
    "rhoHat_mean",
    "rhoHat_sd",
)


def replicate_seeds(seed, reps):
    """Per-replicate ``(data_seed, cv_seed)`` pairs, independent of method and worker layout."""
    children = np.random.SeedSequence(seed).spawn(reps)
    return [tuple(int(s) for s in child.generate_state(2)) for child in children]


def fit_replicate(truth, method, data_seed, cv_seed):
    """Sample one dataset, tune by cross validation and fit on all of it.

    Returns the fitted :class:`~netcca.scca.CcaModel` and the chosen taus.
    """
    import warnings

    from .linalg import standardize
    from .scca import FitConfig, fit
    from .tuning import cross_search, geometric_grid, make_cv_plan, per_iteration_selector, tau_max

    spec = truth.spec
    X, Y = sample_mvn(truth, spec.n, data_seed)
    gx, gy = (truth.graph_x, truth.graph_y) if method.use_graph else (None, None)
    cfg = FitConfig(method.penalty(), n_components=truth.n_components, update=method.update)
    Xd, Yd = standardize(X), standardize(Y)
    tx, ty = tau_max(Xd, Yd, constraint=method.constraint)
    plan = make_cv_plan(
        spec.n,
        method.folds,
        geometric_grid(tx, method.grid_size, method.grid_low),
        geometric_grid(ty, method.grid_size, method.grid_low),
        seed=cv_seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if method.tuning_mode == "per-iteration":
            chosen = []
            selector = per_iteration_selector(X, Y, gx, gy, cfg, plan, log_to=chosen)
            model = fit(Xd, Yd, gx, gy, cfg, tau_selector=selector)
            last = next((r for r in reversed(chosen) if r is not None), None)
            taus = last.tau_opt if last is not None else (plan.tau_x_grid[0], plan.tau_y_grid[0])
        else:
            taus = cross_search(X, Y, gx, gy, cfg, plan).tau_opt
            model = fit(Xd, Yd, gx, gy, cfg.with_taus(*taus))
    return model, taus


def replicate_rows(truth, method, replicate, model):
    rows = []
    for k in range(truth.n_components):
        comp = model.components[k] if k < len(model.components) else None
        for side, support, total in (
            ("X", truth.support_x(k), truth.p),
            ("Y", truth.support_y(k), truth.q),
        ):
            if comp is None:
                selected = []
            else:
                selected = comp.selected_x() if side == "X" else comp.selected_y()
            m = selection_metrics(selected, support, total)
            rows.append(
                {
                    "replicate": replicate,
                    "method": method.name,
                    "side": side,
                    "component": k + 1,
                    **{f: getattr(m, f) for f in ("tp", "fp", "tn", "fn", "sensitivity", "specificity", "mcc")},
                    "rhoHat": 0.0 if comp is None else float(comp.rho),
                }
            )
    return rows


def _task(truth, method, replicate, data_seed, cv_seed):
    t0 = time.perf_counter()
    try:
        model, taus = fit_replicate(truth, method, data_seed, cv_seed)
        rows = replicate_rows(truth, method, replicate, model)
        error = None
    except Exception as exc:  # recorded per replicate, never fatal
        rows, taus, error = [], None, f"{type(exc).__name__}: {exc}"
    return {
        "replicate": replicate,
        "method": method.name,
        "rows": rows,
        "taus": None if taus is None else [float(t) for t in taus],
        "error": error,
        "runtimeSeconds": time.perf_counter() - t0,
        "data_seed": data_seed,
        "cv_seed": cv_seed,
    }


@dataclass
class StudyResult:
    spec: ScenarioSpec
    methods: list
    seed: int
    records: list = field(default_factory=list)

    @property
    def rows(self):
        out = [r for rec in self.records for r in rec["rows"]]
        order = {m.name: i for i, m in enumerate(self.methods)}
        return sorted(out, key=lambda r: (order[r["method"]], r["replicate"], r["component"], r["side"]))

    @property
    def failures(self):
        return [rec for rec in self.records if rec["error"] is not None]

    @property
    def completed_fraction(self):
        if not self.records:
            return 0.0
        return 1.0 - len(self.failures) / len(self.records)

    def summary(self):
        """Mean and standard deviation per (method, side, component)."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r["method"], r["side"], r["component"]), []).append(r)
        out = []
        for (method, side, comp), rs in groups.items():
            row = {"method": method, "side": side, "component": comp, "replicates": len(rs)}
            for f in ("sensitivity", "specificity", "mcc", "rhoHat"):
                vals = np.array([r[f] for r in rs], dtype=float)
                row[f"{f}_mean"] = float(vals.mean())
                row[f"{f}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out.append(row)
        return out

    def mean(self, method, field_name, side=None, component=1):
        vals = [
            r[field_name]
            for r in self.rows
            if r["method"] == method and r["component"] == component and (side is None or r["side"] == side)
        ]
        return float(np.mean(vals)) if vals else float("nan")


def _checkpoint_path(directory, method, replicate):
    return Path(directory) / f"{method}-{replicate:05d}.json"


def run_study(spec, methods, reps, seed=0, n_jobs=1, checkpoint_dir=None):
    """Monte-Carlo study of ``methods`` on scenario ``spec``.

    Replicate ``r`` draws its data and fold assignment from seeds derived
    from ``(seed, r)`` only, so every method sees the same datasets and the
    result does not depend on ``n_jobs``. With ``checkpoint_dir`` each
    finished (method, replicate) is stored as JSON and skipped on rerun.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique")
    truth = build_scenario(spec)
    seeds = replicate_seeds(seed, reps)
    done = {}
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        for m in methods:
            for r in range(reps):
                path = _checkpoint_path(checkpoint_dir, m.name, r + 1)
                if path.exists():
                    done[(m.name, r + 1)] = json.loads(path.read_text())
    todo = [(m, r + 1) for m in methods for r in range(reps) if (m.name, r + 1) not in done]

    def finish(rec):
        if checkpoint_dir is not None and rec["error"] is None:
            from .io import atomic_write_text

            atomic_write_text(_checkpoint_path(checkpoint_dir, rec["method"], rec["replicate"]), json.dumps(rec))
        done[(rec["method"], rec["replicate"])] = rec

    if n_jobs == 1 or len(todo) <= 1:
        for m, r in todo:
            finish(_task(truth, m, r, *seeds[r - 1]))
            log.info("replicate %d of %s finished", r, m.name)
    else:
        from joblib import Parallel, delayed

        recs = Parallel(n_jobs=n_jobs, prefer="processes")(
            delayed(_task)(truth, m, r, *seeds[r - 1]) for m, r in todo
        )
        for rec in recs:
            finish(rec)
    records = [done[(m.name, r + 1)] for m in methods for r in range(reps)]
    return StudyResult(spec, list(methods), seed, records)


def study_manifest(result, extra=None):
    from . import __version__

    return {
        "library": "netcca",
        "version": __version__,
        "scenario": asdict(result.spec),
        "seed": result.seed,
        "methods": [asdict(m) for m in result.methods],
        "replicates": [
            {
                "replicate": rec["replicate"],
                "method": rec["method"],
                "data_seed": rec["data_seed"],
                "cv_seed": rec["cv_seed"],
                "taus": rec["taus"],
                "error": rec["error"],
            }
            for rec in result.records
        ],
        **(extra or {}),
    }
