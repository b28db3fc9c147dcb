"""Community detection on feature graphs.

Louvain maximises weighted Newman modularity.  Personalized PageRank (PPR)
scores nodes by a random walk that restarts at a weighted seed set.  The hybrid
seeds PPR with phenotype association, keeps the smallest high-mass node set and
runs Louvain inside it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .featselect import phenotype_association
from .ingest import DataError, OmicsMatrix, PhenotypeVector
from .netbuild import FeatureGraph


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Partition:
    assignment: tuple[int, ...]
    modularity: float
    method: str
    node_names: tuple[str, ...] = ()
    level_modularity: tuple[float, ...] = ()

    @property
    def n_communities(self) -> int:
        return max(self.assignment) + 1 if self.assignment else 0

    def communities(self) -> list[list[int]]:
        out = [[] for _ in range(self.n_communities)]
        for node, c in enumerate(self.assignment):
            out[c].append(node)
        return out


@dataclass(frozen=True)
class PPRVector:
    seeds: np.ndarray
    damping: float
    scores: np.ndarray
    iterations: int
    residual: float
    node_names: tuple[str, ...] = ()


def relabel(assignment: Sequence[int]) -> tuple[int, ...]:
    """Contiguous IDs numbered by first appearance in node order."""
    mapping: dict[int, int] = {}
    return tuple(mapping.setdefault(c, len(mapping)) for c in assignment)


def modularity(graph: FeatureGraph, assignment: Sequence[int], resolution: float = 1.0) -> float:
    """Q = sum_c [W_c / W - resolution * (S_c / 2W)^2]."""
    if graph.n_edges == 0:
        raise DataError("modularity is undefined on a graph without edges")
    labels = np.asarray(assignment)
    if labels.shape != (graph.n_nodes,):
        raise DataError("partition must assign every node")
    W = graph.weight.sum()
    same = labels[graph.src] == labels[graph.dst]
    n_comm = labels.max() + 1
    intra = np.bincount(labels[graph.src[same]], weights=graph.weight[same], minlength=n_comm)
    strength = np.bincount(graph.src, weights=graph.weight, minlength=graph.n_nodes) + np.bincount(
        graph.dst, weights=graph.weight, minlength=graph.n_nodes
    )
    S = np.bincount(labels, weights=strength, minlength=n_comm)
    return float((intra / W).sum() - resolution * ((S / (2 * W)) ** 2).sum())


def _local_moves(adj, self_loops, strength, m2, order, resolution):
    """One Louvain level: greedily move nodes until no move gains > 1e-12.

    ``adj[i]`` maps neighbour -> weight (no self entries), ``m2`` = 2W.
    """
    n = len(adj)
    comm = list(range(n))
    tot = list(strength)
    improved_any = False
    while True:
        moved = False
        for i in order:
            ci = comm[i]
            ki = strength[i]
            links: dict[int, float] = {}
            for j, w in adj[i].items():
                links[comm[j]] = links.get(comm[j], 0.0) + w
            tot[ci] -= ki
            # gain of inserting i into c, up to a constant shared by all c
            best_c = ci
            best_gain = links.get(ci, 0.0) - resolution * tot[ci] * ki / m2
            for c in sorted(links):
                gain = links[c] - resolution * tot[c] * ki / m2
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] += ki
            if best_c != ci:
                comm[i] = best_c
                moved = True
                improved_any = True
        if not moved:
            break
    return comm, improved_any


def louvain(graph: FeatureGraph, seed: int = 0, resolution: float = 1.0) -> Partition:
    """Two-phase Louvain with seeded node visiting order."""
    if graph.n_edges == 0:
        raise DataError("louvain needs at least one edge")
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    for i, j, w in zip(graph.src.tolist(), graph.dst.tolist(), graph.weight.tolist()):
        adj[i][j] = w
        adj[j][i] = w
    self_loops = [0.0] * n
    m2 = 2.0 * float(graph.weight.sum())
    membership = list(range(n))  # original node -> current super-node
    levels = []
    while True:
        strength = [2.0 * self_loops[i] + sum(adj[i].values()) for i in range(len(adj))]
        order = rng.permutation(len(adj)).tolist()
        comm, improved = _local_moves(adj, self_loops, strength, m2, order, resolution)
        if not improved:
            break
        labels = relabel(comm)
        membership = [labels[membership[v]] for v in range(n)]
        k = max(labels) + 1
        new_adj: list[dict[int, float]] = [dict() for _ in range(k)]
        new_loops = [0.0] * k
        for i in range(len(adj)):
            ci = labels[i]
            new_loops[ci] += self_loops[i]
            for j, w in adj[i].items():
                cj = labels[j]
                if ci == cj:
                    new_loops[ci] += w / 2.0  # each intra edge is seen from both ends
                else:
                    new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
        adj, self_loops = new_adj, new_loops
        levels.append(modularity(graph, relabel(membership), resolution))
    assignment = relabel(membership)
    q = modularity(graph, assignment, resolution)
    return Partition(assignment, q, "louvain", graph.node_names, tuple(levels))


def transition_matrix(graph: FeatureGraph) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic weight-normalised transitions and a dangling-node mask."""
    A = graph.adjacency()
    deg = A.sum(axis=1)
    dangling = deg == 0
    P = np.divide(A, deg[:, None], out=np.zeros_like(A), where=~dangling[:, None])
    return P, dangling


def personalized_pagerank(
    graph: FeatureGraph,
    seeds: Mapping[str, float] | np.ndarray,
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> PPRVector:
    """Power iteration for p = (1-d) s + d P^T p; dangling mass returns to the seeds.

    Stops once the L1 change between iterates drops below ``tol``.
    """
    if not 0.0 < damping < 1.0:
        raise DataError("damping must lie in (0, 1)")
    n = graph.n_nodes
    if isinstance(seeds, Mapping):
        s = np.zeros(n)
        idx = graph.index()
        for name, w in seeds.items():
            if name not in idx:
                raise DataError(f"unknown seed node {name!r}")
            s[idx[name]] = w
    else:
        s = np.asarray(seeds, dtype=np.float64).copy()
    if s.shape != (n,) or np.any(s < 0):
        raise DataError("seed weights must be non-negative, one per node")
    if abs(s.sum() - 1.0) > 1e-9:
        raise DataError(f"seed weights must sum to 1, got {s.sum()}")
    P, dangling = transition_matrix(graph)
    PT = P.T.copy()
    p = s.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        new = (1.0 - damping) * s + damping * (PT @ p + p[dangling].sum() * s)
        new /= new.sum()  # guards conservation against round-off drift
        residual = float(np.abs(new - p).sum())
        p = new
        if residual < tol:
            return PPRVector(s, damping, p, it, residual, graph.node_names)
    raise ConvergenceError(f"PPR did not converge in {max_iter} iterations (residual {residual:.3e})", residual)


@dataclass(frozen=True)
class HybridResult:
    retained: tuple[str, ...]
    retained_mass: float
    ppr: PPRVector
    subgraph: FeatureGraph
    partition: Partition


def greedy_mass_cut(names: Sequence[str], scores: np.ndarray, mass_fraction: float) -> list[int]:
    """Shortest prefix (score desc, name asc) holding >= mass_fraction of the mass."""
    order = sorted(range(len(names)), key=lambda i: (-scores[i], names[i]))
    kept, total = [], 0.0
    for i in order:
        if scores[i] <= 0:
            break
        kept.append(i)
        total += scores[i]
        if total >= mass_fraction - 1e-12:
            break
    return kept


def hybrid_ppr_louvain(
    graph: FeatureGraph,
    X: OmicsMatrix,
    y: PhenotypeVector,
    mass_fraction: float = 0.5,
    seed: int = 0,
    damping: float = 0.85,
    resolution: float = 1.0,
) -> HybridResult:
    """Phenotype-seeded PPR, greedy mass cut, then Louvain on the kept subgraph."""
    if not 0.0 < mass_fraction <= 1.0:
        raise DataError("mass_fraction must be in (0, 1]")
    if X.subject_ids != y.subject_ids:
        raise DataError("matrix and phenotype subject order differ")
    X = X.columns(graph.node_names)
    assoc = phenotype_association(X.values, y)
    if assoc.sum() <= 0:
        raise DataError("no feature is associated with the phenotype; nothing to seed PPR with")
    ppr = personalized_pagerank(graph, assoc / assoc.sum(), damping=damping)
    kept = greedy_mass_cut(graph.node_names, ppr.scores, mass_fraction)
    names = [graph.node_names[i] for i in kept]
    sub = graph.subgraph(names)
    if sub.n_edges == 0:
        # nothing to cluster: every retained node is its own module, modularity undefined
        part = Partition(tuple(range(sub.n_nodes)), float("nan"), "hybrid_ppr_louvain", sub.node_names)
    else:
        part = louvain(sub, seed=seed, resolution=resolution)
        part = Partition(part.assignment, part.modularity, "hybrid_ppr_louvain", sub.node_names,
                         part.level_modularity)
    return HybridResult(tuple(names), float(ppr.scores[kept].sum()), ppr, sub, part)


def write_partition_csv(partition: Partition, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "community"])
        for name, c in zip(partition.node_names, partition.assignment):
            w.writerow([name, c])


def write_ppr_csv(ppr: PPRVector, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "score"])
        for name, s in zip(ppr.node_names, ppr.scores):
            w.writerow([name, repr(float(s))])
