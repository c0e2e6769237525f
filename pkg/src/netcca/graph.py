"""Prior feature networks: edges, degrees and node weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParseError, SelfLoop, UnknownFeature


class WeightRule:
    """Maps a node degree to its penalty weight.

    ``WeightRule("degree")`` (the default) uses ``w = d``; ``"unit"`` uses
    ``w = 1``; ``WeightRule(table={1: 1.0, 2: 1.5, ...})`` looks degrees up in
    a table and falls back to ``default`` when a degree is missing.
    """

    def __init__(self, rule="degree", table=None, default=None):
        if table is not None:
            rule = "custom"
        if rule not in ("degree", "unit", "custom"):
            raise ValueError(f"unknown weight rule {rule!r}")
        if rule == "custom":
            if not table:
                raise ValueError("custom weight rule needs a table")
            if any(v <= 0 for v in table.values()) or (default is not None and default <= 0):
                raise ValueError("weights must be positive")
        self.rule = rule
        self.table = dict(table or {})
        self.default = default

    def __call__(self, degrees):
        d = np.asarray(degrees)
        if self.rule == "degree":
            w = d.astype(float)
        elif self.rule == "unit":
            w = np.ones(d.shape)
        else:
            w = np.array([self._lookup(int(k)) for k in np.ravel(d)], dtype=float).reshape(d.shape)
        # degree-0 nodes never enter an edge term; store a neutral sentinel
        return np.where(d > 0, w, 1.0)

    def _lookup(self, d):
        if d == 0:
            return 1.0
        if d in self.table:
            return float(self.table[d])
        if self.default is None:
            raise KeyError(f"no weight for degree {d}")
        return float(self.default)

    def __repr__(self):
        return f"WeightRule({self.rule!r})" if self.rule != "custom" else f"WeightRule(table={self.table})"


@dataclass(frozen=True)
class FeatureGraph:
    """Undirected graph over ``node_count`` features (0-based node ids).

    Build instances with :meth:`from_edges` or :func:`load_edge_list`, which
    normalize and deduplicate the edge list. The raw constructor stores what
    it is given so that :func:`validate` can inspect malformed graphs.
    """

    node_count: int
    edges: np.ndarray  # (m, 2) int, i < j
    degrees: np.ndarray
    weights: np.ndarray
    duplicates_dropped: int = 0
    weight_rule: WeightRule = field(default_factory=WeightRule, compare=False)

    @classmethod
    def from_edges(cls, node_count, edges=(), weight_rule=None):
        rule = weight_rule or WeightRule()
        pairs = set()
        n_dup = 0
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise SelfLoop(f"{i}-{j}")
            if not (0 <= i < node_count and 0 <= j < node_count):
                raise UnknownFeature(max(i, j) if max(i, j) >= node_count else min(i, j))
            key = (min(i, j), max(i, j))
            if key in pairs:
                n_dup += 1
            pairs.add(key)
        arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        deg = np.bincount(arr.ravel(), minlength=node_count).astype(np.int64)
        return cls(node_count, arr, deg, rule(deg), n_dup, rule)

    @classmethod
    def empty(cls, node_count):
        return cls.from_edges(node_count, ())

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def singletons(self):
        return np.flatnonzero(self.degrees == 0)

    @property
    def connected(self):
        return np.flatnonzero(self.degrees > 0)

    def permuted(self, perm):
        """Relabel nodes so that old node ``perm[k]`` becomes node ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return FeatureGraph.from_edges(self.node_count, inv[self.edges], self.weight_rule)

    def __eq__(self, other):
        if not isinstance(other, FeatureGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.degrees, other.degrees)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def _resolve(token, index, lineno):
    if token in index:
        return index[token]
    try:
        k = int(token)
    except ValueError:
        raise UnknownFeature(token) from None
    if not 1 <= k <= len(index.get("__names__", ())):
        raise UnknownFeature(token)
    return k - 1


def load_edge_list(path, feature_names, weight_rule=None):
    """Read a whitespace-separated edge list.

    Each non-comment line holds two tokens, either feature names from
    ``feature_names`` or 1-based column indices. Lines starting with ``#``
    and blank lines are skipped; repeated edges are collapsed.
    """
    names = list(feature_names)
    index = {name: k for k, name in enumerate(names)}
    index["__names__"] = names
    edges = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        tokens = s.split()
        if len(tokens) != 2:
            raise ParseError(lineno, f"expected 2 tokens, got {len(tokens)}")
        i = _resolve(tokens[0], index, lineno)
        j = _resolve(tokens[1], index, lineno)
        if i == j:
            raise SelfLoop(lineno)
        edges.append((i, j))
    return FeatureGraph.from_edges(len(names), edges, weight_rule)


def write_edge_list(path, graph, feature_names=None):
    lines = []
    for i, j in graph.edges:
        if feature_names is None:
            lines.append(f"{i + 1}\t{j + 1}")
        else:
            lines.append(f"{feature_names[i]}\t{feature_names[j]}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class GraphReport:
    """Outcome of :func:`validate`.

    ``problems`` holds ``(kind, detail)`` pairs that make the graph unusable;
    ``notes`` records harmless findings such as duplicates dropped at load.
    """

    problems: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.problems

    def kinds(self):
        return [k for k, _ in self.problems + self.notes]

    def __bool__(self):
        return self.ok


def validate(graph, p):
    """Check ``graph`` against dimension ``p``.

    Problem kinds: ``DimensionMismatch``, ``SelfLoop``, ``EdgeOutOfRange``,
    ``DuplicateEdge``, ``DegreeMismatch`` and ``BadWeight``.
    """
    report = []
    if graph.node_count != p:
        report.append(("DimensionMismatch", f"graph has {graph.node_count} nodes, data has {p}"))
    edges = np.asarray(graph.edges, dtype=np.int64).reshape(-1, 2)
    for i, j in edges:
        if i == j:
            report.append(("SelfLoop", f"node {i}"))
        if not (0 <= i < graph.node_count and 0 <= j < graph.node_count):
            report.append(("EdgeOutOfRange", f"edge ({i}, {j})"))
    keys = np.sort(edges, axis=1)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    for (i, j), c in zip(uniq, counts):
        if c > 1:
            report.append(("DuplicateEdge", f"edge ({i}, {j}) appears {c} times"))
    valid = (edges >= 0).all(axis=1) & (edges < graph.node_count).all(axis=1)
    deg = np.bincount(edges[valid].ravel(), minlength=graph.node_count)[: graph.node_count]
    if len(graph.degrees) != graph.node_count or not np.array_equal(deg, graph.degrees):
        report.append(("DegreeMismatch", "stored degrees do not match the edge list"))
    else:
        w = np.asarray(graph.weights, dtype=float)
        if w.shape != (graph.node_count,) or np.any(w[deg > 0] <= 0) or not np.all(np.isfinite(w)):
            report.append(("BadWeight", "non-singleton nodes need positive finite weights"))
    notes = []
    if graph.duplicates_dropped:
        notes.append(("DuplicateEdge", f"{graph.duplicates_dropped} duplicate edge(s) dropped at load"))
    return GraphReport(report, notes)
