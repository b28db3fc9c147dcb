"""Feature-network construction from omics matrices, plus edge-list import/export.

Every builder works on the columns of a subjects-by-features matrix and returns
an immutable :class:`FeatureGraph` whose node order matches the matrix columns.
Features that make a measure undefined (zero variance, zero norm) stay in the
graph as isolated nodes and are listed in ``flags``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .ingest import DataError, OmicsMatrix

_SIM_TOL = 1e-12


@dataclass(frozen=True)
class FeatureGraph:
    node_names: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    node_attrs: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        names = tuple(str(n) for n in self.node_names)
        object.__setattr__(self, "node_names", names)
        if len(set(names)) != len(names):
            raise DataError("duplicate node names")
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        w = np.asarray(self.weight, dtype=np.float64)
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise DataError("edge arrays must be 1-D and equal length")
        if len(src):
            if np.any(src >= dst):
                raise DataError("edges must satisfy src < dst (no self-loops)")
            if src.min() < 0 or dst.max() >= len(names):
                raise DataError("edge endpoint out of range")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise DataError("edge weights must be finite and positive")
            order = np.lexsort((dst, src))
            src, dst, w = src[order], dst[order], w[order]
            key = src * len(names) + dst
            if np.any(key[1:] == key[:-1]):
                raise DataError("duplicate edges")
        for a in (src, dst, w):
            a.flags.writeable = False
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "weight", w)
        if self.node_attrs is not None:
            attrs = np.array(self.node_attrs, dtype=np.float64)
            if attrs.ndim != 2 or attrs.shape[0] != len(names):
                raise DataError("node_attrs must have one row per node")
            attrs.flags.writeable = False
            object.__setattr__(self, "node_attrs", attrs)

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> list[tuple[str, str, float]]:
        n = self.node_names
        return [(n[i], n[j], float(w)) for i, j, w in zip(self.src, self.dst, self.weight)]

    def adjacency(self) -> np.ndarray:
        """Dense symmetric weighted adjacency with a zero diagonal."""
        A = np.zeros((self.n_nodes, self.n_nodes))
        A[self.src, self.dst] = self.weight
        A[self.dst, self.src] = self.weight
        return A

    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.node_names)}

    def subgraph(self, names: Sequence[str]) -> "FeatureGraph":
        idx = self.index()
        keep = [idx[n] for n in names]
        remap = np.full(self.n_nodes, -1)
        remap[keep] = np.arange(len(keep))
        s, d = remap[self.src], remap[self.dst]
        ok = (s >= 0) & (d >= 0)
        s, d = s[ok], d[ok]
        lo, hi = np.minimum(s, d), np.maximum(s, d)
        attrs = None if self.node_attrs is None else self.node_attrs[keep]
        flags = tuple(f for f in self.flags if f in set(names))
        return FeatureGraph(tuple(names), lo, hi, self.weight[ok], attrs, dict(self.meta, subgraph=True), flags)

    def with_attrs(self, attrs: np.ndarray) -> "FeatureGraph":
        return FeatureGraph(self.node_names, self.src, self.dst, self.weight, attrs, self.meta, self.flags)

    def scaled(self, factor: float) -> "FeatureGraph":
        return FeatureGraph(self.node_names, self.src, self.dst, self.weight * factor, self.node_attrs, self.meta, self.flags)


def graph_from_dense(names, W: np.ndarray, meta: dict | None = None, flags=()) -> FeatureGraph:
    """Upper-triangle edges with strictly positive weight."""
    iu, ju = np.triu_indices(W.shape[0], k=1)
    w = W[iu, ju]
    keep = w > 0
    return FeatureGraph(tuple(names), iu[keep], ju[keep], w[keep], None, meta or {}, tuple(flags))


def _check_matrix(X: OmicsMatrix, min_subjects: int = 2):
    if X.shape[1] < 2:
        raise DataError("network construction needs at least two features")
    if X.shape[0] < min_subjects:
        raise DataError(f"network construction needs at least {min_subjects} subjects")
    if not np.all(np.isfinite(X.values)):
        raise DataError("matrix contains missing or non-finite values; align the cohort first")


def cosine_similarity_matrix(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column cosine similarities and a zero-norm mask (zero rows/cols for those)."""
    norms = np.sqrt((values**2).sum(axis=0))
    zero = norms <= _SIM_TOL * max(float(np.abs(values).max(initial=0.0)), 1e-300)
    unit = np.where(zero, 0.0, values / np.where(zero, 1.0, norms))
    S = np.clip(unit.T @ unit, -1.0, 1.0)
    S[zero, :] = 0.0
    S[:, zero] = 0.0
    return S, zero


def euclidean_similarity_matrix(values: np.ndarray) -> np.ndarray:
    """1 / (1 + ||x_i - x_j||) between columns."""
    sq = (values**2).sum(axis=0)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * values.T @ values, 0.0)
    return 1.0 / (1.0 + np.sqrt(d2))


def _similarity(values, metric):
    if metric == "cosine":
        return cosine_similarity_matrix(values)
    if metric == "euclidean":
        return euclidean_similarity_matrix(values), np.zeros(values.shape[1], dtype=bool)
    raise DataError(f"unknown metric {metric!r}")


def _prune(W: np.ndarray, threshold: float | None, top_fraction: float | None) -> np.ndarray:
    W = W.copy()
    np.fill_diagonal(W, 0.0)
    if threshold is not None and top_fraction is not None:
        raise DataError("give either a threshold or a top fraction, not both")
    if threshold is not None:
        if not 0.0 <= threshold <= 1.0:
            raise DataError(f"threshold {threshold} outside the similarity range [0, 1]")
        W[W < threshold] = 0.0
    elif top_fraction is not None:
        if not 0.0 < top_fraction <= 1.0:
            raise DataError("top_fraction must be in (0, 1]")
        iu, ju = np.triu_indices(W.shape[0], k=1)
        w = W[iu, ju]
        pos = np.flatnonzero(w > 0)
        n_keep = int(np.ceil(top_fraction * len(pos)))
        # stable sort keeps canonical (i, j) order among equal weights
        order = pos[np.argsort(-w[pos], kind="stable")]
        drop = order[n_keep:]
        W[iu[drop], ju[drop]] = 0.0
        W[ju[drop], iu[drop]] = 0.0
    return W


def similarity_network(
    X: OmicsMatrix, metric: str = "cosine", threshold: float | None = None, top_fraction: float | None = None
) -> FeatureGraph:
    _check_matrix(X)
    S, zero = _similarity(X.values, metric)
    W = _prune(S, threshold, top_fraction)
    flags = [n for n, z in zip(X.feature_names, zero) if z]
    meta = {"method": "similarity", "metric": metric, "threshold": threshold, "top_fraction": top_fraction}
    return graph_from_dense(X.feature_names, W, meta, flags)


def abs_correlation_matrix(values: np.ndarray, method: str = "pearson") -> tuple[np.ndarray, np.ndarray]:
    if method == "spearman":
        values = rankdata(values, axis=0, method="average")
    elif method != "pearson":
        raise DataError(f"unknown correlation method {method!r}")
    xc = values - values.mean(axis=0)
    norms = np.sqrt((xc**2).sum(axis=0))
    scale = np.maximum(np.abs(values).max(axis=0), 1e-300) * np.sqrt(values.shape[0])
    degenerate = norms <= _SIM_TOL * scale
    unit = np.where(degenerate, 0.0, xc / np.where(degenerate, 1.0, norms))
    R = np.clip(np.abs(unit.T @ unit), 0.0, 1.0)
    np.fill_diagonal(R, 0.0)
    return R, degenerate


def correlation_network(
    X: OmicsMatrix, method: str = "pearson", threshold: float | None = None, top_fraction: float | None = None
) -> FeatureGraph:
    """Weights are |r|; Spearman is Pearson on average ranks."""
    _check_matrix(X)
    R, degenerate = abs_correlation_matrix(X.values, method)
    W = _prune(R, threshold, top_fraction)
    flags = [n for n, d in zip(X.feature_names, degenerate) if d]
    meta = {"method": "correlation", "correlation": method, "threshold": threshold, "top_fraction": top_fraction}
    return graph_from_dense(X.feature_names, W, meta, flags)


@dataclass(frozen=True)
class ScaleFreeFit:
    beta: float
    r2: float
    slope: float
    mean_connectivity: float


def scale_free_fit(connectivity: np.ndarray, n_bins: int = 10) -> tuple[float, float]:
    """R^2 and slope of log10(frequency) ~ log10(mean connectivity) over log-spaced bins.

    Nodes with zero connectivity are excluded.  Returns (nan, nan) when fewer
    than two bins are occupied.
    """
    k = connectivity[connectivity > 0]
    if len(k) == 0 or np.ptp(k) <= 1e-12 * k.max():
        return float("nan"), float("nan")
    edges = np.logspace(np.log10(k.min()), np.log10(k.max()), n_bins + 1)
    which = np.clip(np.searchsorted(edges, k, side="right") - 1, 0, n_bins - 1)
    xs, ys = [], []
    for b in range(n_bins):
        members = k[which == b]
        if len(members):
            xs.append(np.log10(members.mean()))
            ys.append(np.log10(len(members) / len(k)))
    if len(xs) < 2:
        return float("nan"), float("nan")
    x, y = np.array(xs), np.array(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    sst = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / sst if sst > 0 else 1.0
    return float(r2), float(slope)


def soft_threshold_network(
    X: OmicsMatrix, beta_grid: Sequence[float] = tuple(range(1, 21)), target_r2: float = 0.8, n_bins: int = 10
) -> tuple[FeatureGraph, float, list[ScaleFreeFit]]:
    """Adjacency |r|^beta with beta picked by scale-free topology fit.

    The smallest beta whose R^2 reaches ``target_r2`` wins; otherwise the beta
    with the best R^2 is used and the graph meta carries ``"fit_flag"``.
    """
    _check_matrix(X)
    if not beta_grid:
        raise DataError("beta_grid is empty")
    R, degenerate = abs_correlation_matrix(X.values, "pearson")
    report = []
    for beta in beta_grid:
        if beta <= 0:
            raise DataError("beta values must be positive")
        A = R**beta
        r2, slope = scale_free_fit(A.sum(axis=1), n_bins)
        report.append(ScaleFreeFit(float(beta), r2, slope, float(A.sum(axis=1).mean())))
    valid = [f for f in report if np.isfinite(f.r2)]
    if not valid:
        raise DataError("scale-free fit undefined: every feature has the same connectivity")
    passing = [f for f in valid if f.r2 >= target_r2]
    flag = None
    if passing:
        chosen = min(passing, key=lambda f: f.beta)
    else:
        chosen = max(valid, key=lambda f: (f.r2, -f.beta))
        flag = f"no beta reached R^2 >= {target_r2}; using best fit"
    meta = {"method": "soft_threshold", "beta": chosen.beta, "r2": chosen.r2, "target_r2": target_r2}
    if flag:
        meta["fit_flag"] = flag
    flags = [n for n, d in zip(X.feature_names, degenerate) if d]
    graph = graph_from_dense(X.feature_names, R**chosen.beta, meta, flags)
    return graph, chosen.beta, report


def knn_lists(S: np.ndarray, names: Sequence[str], k: int) -> list[list[int]]:
    """For each node, the k most similar other nodes; ties go to the smaller name."""
    n = len(names)
    if k <= 0 or k >= n:
        raise DataError(f"k must satisfy 0 < k < {n}, got {k}")
    name_rank = np.empty(n, dtype=np.int64)
    name_rank[np.argsort(np.array(names, dtype=object), kind="stable")] = np.arange(n)
    out = []
    for i in range(n):
        cand = np.delete(np.arange(n), i)
        order = np.lexsort((name_rank[cand], -S[i, cand]))
        out.append(cand[order[:k]].tolist())
    return out


def knn_graph(X: OmicsMatrix, k: int = 15, metric: str = "cosine", mutual: bool = False) -> FeatureGraph:
    """k-nearest-neighbour feature graph, union-symmetrised unless ``mutual``.

    Edge weight is the similarity.  Selected neighbours with non-positive
    cosine similarity yield no edge (weights must be positive); the count of
    such drops is recorded in ``meta["dropped_nonpositive"]``.
    """
    if X.shape[1] < 2:
        raise DataError("network construction needs at least two features")
    if not np.all(np.isfinite(X.values)):
        raise DataError("matrix contains missing or non-finite values; align the cohort first")
    S, zero = _similarity(X.values, metric)
    lists = knn_lists(S, X.feature_names, k)
    n = X.shape[1]
    chosen = np.zeros((n, n), dtype=bool)
    for i, nb in enumerate(lists):
        chosen[i, nb] = True
    keep = (chosen & chosen.T) if mutual else (chosen | chosen.T)
    W = np.where(keep, S, 0.0)
    dropped = int(np.count_nonzero(np.triu(keep & (S <= 0), 1)))
    meta = {"method": "knn", "k": k, "metric": metric, "mutual": mutual, "dropped_nonpositive": dropped}
    flags = [nm for nm, z in zip(X.feature_names, zero) if z]
    return graph_from_dense(X.feature_names, W, meta, flags)


def snn_graph(X: OmicsMatrix, k: int = 15) -> FeatureGraph:
    """Shared-nearest-neighbour graph: Jaccard overlap of cosine k-NN lists."""
    if X.shape[1] < 2:
        raise DataError("network construction needs at least two features")
    S, zero = cosine_similarity_matrix(X.values)
    lists = knn_lists(S, X.feature_names, k)
    n = X.shape[1]
    M = np.zeros((n, n))
    for i, nb in enumerate(lists):
        M[i, nb] = 1.0
    inter = M @ M.T
    J = inter / (2 * k - inter)
    np.fill_diagonal(J, 0.0)
    meta = {"method": "snn", "k": k}
    flags = [nm for nm, z in zip(X.feature_names, zero) if z]
    return graph_from_dense(X.feature_names, J, meta, flags)


def export_edgelist(graph: FeatureGraph, path) -> None:
    """Write ``source,target,weight`` sorted by canonical (i, j)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "weight"])
        for a, b, wt in graph.edges():
            w.writerow([a, b, repr(wt)])


def write_node_order(graph: FeatureGraph, path) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in graph.node_names), encoding="utf-8")


def read_node_order(path) -> list[str]:
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def export_graphml(graph: FeatureGraph, path) -> None:
    import networkx as nx

    g = nx.Graph()
    for i, name in enumerate(graph.node_names):
        attrs = {}
        if graph.node_attrs is not None:
            attrs = {f"a{j}": float(v) for j, v in enumerate(graph.node_attrs[i])}
        g.add_node(name, **attrs)
    g.add_weighted_edges_from(graph.edges())
    nx.write_graphml(g, path)


def import_network(path, nodes: Sequence[str] | None = None) -> FeatureGraph:
    """Read an edge list (``source,target,weight``; header optional).

    Reversed duplicates collapse to one edge; conflicting weights, self-loops
    and non-positive weights are errors.  Without ``nodes`` the node order is
    the sorted set of names in the file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and [c.strip().lower() for c in rows[0]] == ["source", "target", "weight"]:
        rows = rows[1:]
    parsed = []
    for r, row in enumerate(rows, start=1):
        if len(row) != 3:
            raise DataError(f"{path}: line {r} needs source,target,weight")
        a, b = row[0].strip(), row[1].strip()
        try:
            w = float(row[2])
        except ValueError:
            raise DataError(f"{path}: line {r} weight {row[2]!r} is not numeric") from None
        if a == b:
            raise DataError(f"{path}: self-loop on {a!r}")
        if not np.isfinite(w) or w <= 0:
            raise DataError(f"{path}: non-positive or non-finite weight on {a}-{b}")
        parsed.append((a, b, w))
    if nodes is None:
        nodes = sorted({a for a, _, _ in parsed} | {b for _, b, _ in parsed})
    index = {n: i for i, n in enumerate(nodes)}
    edges: dict[tuple[int, int], float] = {}
    for a, b, w in parsed:
        if a not in index or b not in index:
            raise DataError(f"{path}: unknown node in edge {a}-{b}")
        key = tuple(sorted((index[a], index[b])))
        if key in edges and edges[key] != w:
            raise DataError(f"{path}: edge {a}-{b} listed with conflicting weights")
        edges[key] = w
    keys = sorted(edges)
    src = np.array([k[0] for k in keys], dtype=np.int64)
    dst = np.array([k[1] for k in keys], dtype=np.int64)
    w = np.array([edges[k] for k in keys])
    return FeatureGraph(tuple(nodes), src, dst, w, None, {"method": "import", "path": str(path)})
