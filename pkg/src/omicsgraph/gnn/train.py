"""Node attributes, embedding training and embedding I/O."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from ..featselect import phenotype_association
from ..ingest import DataError, OmicsMatrix, PhenotypeVector
from ..netbuild import FeatureGraph
from . import autograd as ag
from .layers import GNNEncoder, GnnLayerConfig, GraphOperators, Linear, layer_stack


class NumericError(RuntimeError):
    """Training produced a non-finite value."""


NODE_ATTRIBUTES = ("mean", "std", "phenotype_association", "weighted_degree")


def standardize_columns(M: np.ndarray) -> np.ndarray:
    """Z-score each column (population std); zero-std columns become 0."""
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    ok = sd > 1e-12 * np.maximum(np.abs(mu), 1.0)
    return np.where(ok, (M - mu) / np.where(ok, sd, 1.0), 0.0)


def raw_node_attributes(graph: FeatureGraph, X: OmicsMatrix, y: PhenotypeVector | None) -> np.ndarray:
    """Unstandardised [mean, std, association with y, weighted degree] per node."""
    index = {n: i for i, n in enumerate(X.feature_names)}
    missing = [n for n in graph.node_names if n not in index]
    if missing:
        raise DataError(f"graph nodes missing from the matrix: {missing[:5]}")
    if y is not None and X.subject_ids != y.subject_ids:
        raise DataError("matrix and phenotype subject order differ")
    V = X.values[:, [index[n] for n in graph.node_names]]
    mean = V.mean(axis=0)
    std = V.std(axis=0, ddof=1) if V.shape[0] > 1 else np.zeros(V.shape[1])
    std = np.where(np.ptp(V, axis=0) == 0, 0.0, std)
    assoc = phenotype_association(V, y) if y is not None else np.zeros(V.shape[1])
    degree = graph.adjacency().sum(axis=1)
    return np.column_stack([mean, std, assoc, degree])


def node_feature_matrix(graph: FeatureGraph, X: OmicsMatrix, y: PhenotypeVector | None) -> np.ndarray:
    """Per-node attribute matrix (nodes x 4), each column z-scored across nodes."""
    return standardize_columns(raw_node_attributes(graph, X, y))


@dataclass(frozen=True)
class EmbedConfig:
    kind: str = "gcn"
    num_layers: int = 2
    hidden: int = 64
    dim: int = 32
    num_heads: int = 1
    objective: str = "adjacency_reconstruction"  # or "phenotype_regression"
    lr: float = 0.01
    epochs: int = 200
    optimizer: str = "sgd"
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.objective not in ("adjacency_reconstruction", "phenotype_regression"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")

    def layers(self, in_dim: int) -> list[GnnLayerConfig]:
        kw = {"num_heads": self.num_heads} if self.kind == "gat" else {}
        return layer_stack(self.kind, in_dim, self.hidden, self.dim, self.num_layers, **kw)


@dataclass(frozen=True)
class EmbeddingMatrix:
    node_names: tuple[str, ...]
    values: np.ndarray
    loss_curve: tuple[float, ...] = ()
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != len(self.node_names):
            raise DataError("embedding must have one row per node")
        if not np.all(np.isfinite(values)):
            raise NumericError("embedding contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _non_edges(ops: GraphOperators) -> tuple[np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(ops.n, k=1)
    free = ops.binary[iu, ju] == 0
    return iu[free], ju[free]


def train_embedder(
    graph: FeatureGraph,
    node_attrs: np.ndarray,
    config: EmbedConfig = EmbedConfig(),
    targets: np.ndarray | None = None,
) -> EmbeddingMatrix:
    """Train a GNN encoder and return the final-layer node embeddings.

    ``phenotype_regression`` fits a linear scalar head on top of the encoder to
    per-node ``targets`` (typically |association with the phenotype|) by MSE.
    ``adjacency_reconstruction`` scores node pairs by inner product and uses
    binary cross-entropy on all edges plus an equal number of non-edges drawn
    afresh every epoch from a seeded stream.
    """
    H = np.asarray(node_attrs, dtype=np.float64)
    if H.shape[0] != graph.n_nodes:
        raise DataError("node_attrs must have one row per graph node")
    ops = GraphOperators.from_graph(graph)
    encoder = GNNEncoder(config.layers(H.shape[1]), seed=config.seed)
    params = encoder.parameters()
    rng = np.random.default_rng([config.seed, 1])

    if config.objective == "phenotype_regression":
        if targets is None:
            raise DataError("phenotype_regression needs per-node targets")
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
        head = Linear(config.dim, 1, rng)
        params = params + head.parameters()

        def loss_fn(Z):
            return ag.mse(head(Z), targets)

    else:
        if graph.n_edges == 0:
            raise DataError("adjacency reconstruction needs at least one edge")
        pos_i, pos_j = graph.src, graph.dst
        neg_pool_i, neg_pool_j = _non_edges(ops)

        def loss_fn(Z):
            n_neg = min(len(pos_i), len(neg_pool_i))
            pick = rng.choice(len(neg_pool_i), size=n_neg, replace=False) if n_neg else np.array([], dtype=int)
            I = np.concatenate([pos_i, neg_pool_i[pick]])
            J = np.concatenate([pos_j, neg_pool_j[pick]])
            labels = np.concatenate([np.ones(len(pos_i)), np.zeros(n_neg)])
            logits = ag.tsum(ag.mul(ag.take(Z, I), ag.take(Z, J)), axis=1)
            return ag.bce_with_logits(logits, labels)

    opt = ag.make_optimizer(config.optimizer, params, config.lr, config.momentum)
    curve = []
    for epoch in range(config.epochs):
        opt.zero_grad()
        loss = loss_fn(encoder(H, ops))
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value} at epoch {epoch} ({config})")
        curve.append(value)
        loss.backward()
        if config.lr:
            opt.step()
    Z = encoder(H, ops).data
    return EmbeddingMatrix(graph.node_names, Z, tuple(curve), config.seed, asdict(config))


def write_embeddings_csv(E: EmbeddingMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", *(f"e{i + 1}" for i in range(E.dim))])
        for name, row in zip(E.node_names, E.values):
            w.writerow([name, *(repr(float(v)) for v in row)])


def read_embeddings_csv(path) -> EmbeddingMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    names = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(names), len(rows[0]) - 1)
    return EmbeddingMatrix(tuple(names), values)


def write_loss_csv(E: EmbeddingMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(E.loss_curve):
            w.writerow([i, repr(v)])
