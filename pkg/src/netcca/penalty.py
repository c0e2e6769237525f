"""Grouped and fused graph penalties and their compiled subproblems.

Each canonical-vector update solves

    minimize    penalty(v)
    subject to  || c - M v ||_inf <= tau

where ``M`` is ``rho * (S + ridge I)`` (constraint variant A) or ``rho * I``
(variant B). :func:`compile_subproblem` rewrites this as a
:class:`ConvexProgram`: absolute-value rows, two-row second-order-cone
blocks and one interval block, all sharing the original variable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

FAMILIES = ("grouped", "fused")
CONSTRAINTS = ("A", "B")


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty family and constraint variant.

    Parameters
    ----------
    family : {"grouped", "fused"}
    constraint : {"A", "B"}
        A bounds ``S_xy beta - rho S~xx alpha``; B bounds
        ``S~xx^{-1} S_xy beta - rho alpha``.
    eta : float
        Mix between the edge terms (weight ``1 - eta``) and the l1 term on
        singletons (weight ``eta``). Must satisfy ``0 <= eta < 1``.
    gamma : float
        Exponent of the grouped edge norm; fitting supports ``gamma = 2`` only.
    tie_break : float
        Weight of an extra l1 term on every non-singleton coordinate. The
        fused objective is flat along fused groups whenever their intervals
        overlap, so the optimum is not unique; this term selects the
        sparsest optimal point. Use 0 for the bare penalty.
    """

    family: str = "fused"
    constraint: str = "B"
    eta: float = 0.5
    gamma: float = 2.0
    tie_break: float = 1e-3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be 'A' or 'B', got {self.constraint!r}")
        if not 0 <= self.eta < 1:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.tie_break < 0:
            raise ValueError("tie_break must be nonnegative")


def grouped_penalty_value(v, graph, eta, gamma=2.0):
    v = np.asarray(v, dtype=float)
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.weights
    a = np.abs(v)
    edge = (a[i] ** gamma / w[i] + a[j] ** gamma / w[j]) ** (1.0 / gamma)
    return float((1 - eta) * edge.sum() + eta * a[graph.singletons].sum())


def fused_penalty_value(v, graph, eta):
    v = np.asarray(v, dtype=float)
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.weights
    edge = np.abs(v[i] / w[i] - v[j] / w[j])
    return float((1 - eta) * edge.sum() + eta * np.abs(v[graph.singletons]).sum())


def penalty_value(v, graph, cfg):
    if cfg.family == "grouped":
        return grouped_penalty_value(v, graph, cfg.eta, cfg.gamma)
    return fused_penalty_value(v, graph, cfg.eta)


@dataclass(frozen=True)
class ConstraintData:
    """The interval constraint ``|| rhs - M v ||_inf <= tau``.

    ``M`` is ``scale * cov.forward`` when ``cov`` is given (variant A) and
    ``scale * I`` otherwise (variant B).
    """

    rhs: np.ndarray
    scale: float
    tau: float
    cov: object = None

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")

    @property
    def dim(self):
        return self.rhs.size

    def apply(self, v):
        if self.cov is None:
            return self.scale * v
        return self.scale * self.cov.forward(v)

    def dense_operator(self):
        if self.cov is None:
            return self.scale * np.eye(self.dim)
        return self.scale * self.cov.dense()

    def residual(self, v):
        """``|| rhs - M v ||_inf``."""
        return float(np.max(np.abs(self.rhs - self.apply(v)), initial=0.0))


@dataclass(frozen=True)
class ConvexProgram:
    """Canonical form handed to the solver.

    minimize    sum_k abs_weights[k] * |abs_rows[k] v|
              + sum_e cone_weights[e] * || cone_rows[2e:2e+2] v ||_2
    subject to  rhs - tau <= M v <= rhs + tau

    Row ``k < n_vars`` of ``abs_rows`` is the unit vector ``e_k`` so that
    every coordinate has its own splitting variable. ``is_penalty`` marks
    the abs rows that belong to the graph penalty proper (the rest are
    tie-break rows).
    """

    n_vars: int
    abs_rows: sp.csr_matrix
    abs_weights: np.ndarray
    is_penalty: np.ndarray
    cone_rows: sp.csr_matrix
    cone_weights: np.ndarray
    constraint: ConstraintData

    @property
    def is_linear(self):
        return self.cone_weights.size == 0

    @property
    def variable_count(self):
        """Size of the epigraph formulation: v plus one scalar per norm term."""
        return self.n_vars + int(np.count_nonzero(self.abs_weights)) + self.cone_weights.size

    def _cone_norms(self, v):
        z = (self.cone_rows @ v).reshape(-1, 2)
        return np.sqrt((z**2).sum(axis=1))

    def objective(self, v):
        v = np.asarray(v, dtype=float)
        out = self.abs_weights @ np.abs(self.abs_rows @ v)
        if self.cone_weights.size:
            out += self.cone_weights @ self._cone_norms(v)
        return float(out)

    def penalty(self, v):
        """Objective without the tie-break rows."""
        v = np.asarray(v, dtype=float)
        w = np.where(self.is_penalty, self.abs_weights, 0.0)
        out = w @ np.abs(self.abs_rows @ v)
        if self.cone_weights.size:
            out += self.cone_weights @ self._cone_norms(v)
        return float(out)

    def violation(self, v):
        """Amount by which ``v`` breaks the interval constraint (0 if feasible)."""
        return max(self.constraint.residual(v) - self.constraint.tau, 0.0)

    def zero_is_feasible(self):
        return self.constraint.residual(np.zeros(self.n_vars)) <= self.constraint.tau


def compile_subproblem(cfg, graph, cd):
    """Compile one canonical-vector update into a :class:`ConvexProgram`.

    The fused family yields only absolute-value rows (a linear program after
    splitting); the grouped family adds one second-order-cone block per
    edge, ``t_ij >= ||(v_i / sqrt(w_i), v_j / sqrt(w_j))||``.
    """
    p = graph.node_count
    if cd.dim != p:
        raise ValueError(f"constraint has dimension {cd.dim}, graph has {p} nodes")
    w = graph.weights
    deg = graph.degrees
    ident_w = np.where(deg == 0, cfg.eta, cfg.tie_break)
    is_pen = [deg == 0]
    rows = [sp.identity(p, format="csr")]
    weights = [ident_w]
    m = graph.n_edges
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    if cfg.family == "fused" and m:
        r = np.repeat(np.arange(m), 2)
        c = graph.edges.ravel()
        vals = np.column_stack([1.0 / w[i], -1.0 / w[j]]).ravel()
        rows.append(sp.csr_matrix((vals, (r, c)), shape=(m, p)))
        weights.append(np.full(m, 1 - cfg.eta))
        is_pen.append(np.ones(m, dtype=bool))
    if cfg.family == "grouped" and m:
        if cfg.gamma != 2:
            raise ValueError("only gamma = 2 can be compiled into a cone program")
        r = np.arange(2 * m)
        c = graph.edges.ravel()
        vals = np.column_stack([1.0 / np.sqrt(w[i]), 1.0 / np.sqrt(w[j])]).ravel()
        cone = sp.csr_matrix((vals, (r, c)), shape=(2 * m, p))
        cone_w = np.full(m, 1 - cfg.eta)
    else:
        cone = sp.csr_matrix((0, p))
        cone_w = np.zeros(0)
    return ConvexProgram(
        p,
        sp.vstack(rows, format="csr"),
        np.concatenate(weights),
        np.concatenate(is_pen),
        cone,
        cone_w,
        cd,
    )
