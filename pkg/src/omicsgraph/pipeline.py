"""End-to-end network-integrated phenotype prediction and subject representations.

The predictor trains four stages as one computation: a GNN embeds the feature
graph, each node embedding is reduced to a scalar weight (mean, max or a
frozen pre-trained autoencoder), the weights are folded into the subject
matrix (feature weighting or concatenation of the projected representation),
and a feed-forward classifier predicts the class.  Cross-entropy gradients
reach the GNN through the reduction.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple, Sequence

import numpy as np

from .gnn import autograd as ag
from .gnn.layers import GNNEncoder, GraphOperators, Linear, glorot, layer_stack
from .gnn.train import EmbeddingMatrix, NumericError, node_feature_matrix
from .ingest import AlignedDataset, DataError, OmicsMatrix, concat_modalities
from .netbuild import FeatureGraph


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1_weighted: float
    f1_macro: float
    per_class_f1: tuple[float, ...]
    confusion: np.ndarray


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(C, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return C


def metrics_from_confusion(C: np.ndarray) -> Metrics:
    tp = np.diag(C).astype(np.float64)
    support = C.sum(axis=1).astype(np.float64)
    predicted = C.sum(axis=0).astype(np.float64)
    # 2PR / (P + R) written over counts: 2 tp / (support + predicted), 0/0 -> 0
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    total = C.sum()
    return Metrics(
        accuracy=float(tp.sum() / total),
        f1_weighted=float((f1 * support).sum() / total),
        f1_macro=float(f1.mean()),
        per_class_f1=tuple(float(v) for v in f1),
        confusion=C,
    )


def compute_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    """Accuracy, support-weighted F1 and macro F1 (0/0 counts as 0)."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0:
        raise DataError("no labels")
    if y_true.shape != y_pred.shape:
        raise DataError("y_true and y_pred differ in length")
    if min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= n_classes:
        raise DataError("labels out of range")
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, n_classes))


# ---------------------------------------------------------------- reduction / integration


class Reduction(NamedTuple):
    raw: np.ndarray
    weights: np.ndarray


def to_weight_range(raw: np.ndarray, low: float = 0.5, high: float = 1.5) -> np.ndarray:
    """Min-max to [0, 1] then map onto [low, high]; constant input maps to the midpoint."""
    span = raw.max() - raw.min()
    if span <= 1e-12 * max(1.0, np.abs(raw).max()):
        return np.full(raw.shape, 0.5 * (low + high))
    return low + (high - low) * (raw - raw.min()) / span


@dataclass
class Autoencoder:
    """Linear d -> 1 -> d bottleneck fitted by Adam on squared reconstruction error."""

    dim: int
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 7])
        self.W_enc = glorot(rng, self.dim, 1)
        self.b_enc = ag.Tensor(np.zeros(1), requires_grad=True)
        self.W_dec = glorot(rng, 1, self.dim)
        self.b_dec = ag.Tensor(np.zeros(self.dim), requires_grad=True)
        self.losses: list[float] = []

    def encode(self, E) -> ag.Tensor:
        return ag.add(ag.matmul(E, self.W_enc), self.b_enc)

    def loss(self, E: np.ndarray) -> ag.Tensor:
        recon = ag.add(ag.matmul(self.encode(E), self.W_dec), self.b_dec)
        return ag.mse(recon, E)

    def fit(self, E: np.ndarray, epochs: int = 2000, lr: float = 0.01) -> "Autoencoder":
        params = [self.W_enc, self.b_enc, self.W_dec, self.b_dec]
        opt = ag.Adam(params, lr)
        for epoch in range(epochs):
            opt.zero_grad()
            loss = self.loss(E)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"autoencoder diverged at epoch {epoch}")
            self.losses.append(value)
            loss.backward()
            opt.step()
        self.losses.append(float(self.loss(E).data))
        return self

    def frozen_encoder(self):
        W, b = self.W_enc.data.copy(), self.b_enc.data.copy()
        return lambda E: ag.add(ag.matmul(E, W), b)


def reduce_embeddings(
    E: EmbeddingMatrix | np.ndarray, mode: str = "mean", seed: int = 0, weight_range=(0.5, 1.5)
) -> Reduction:
    """Collapse each node's embedding to one scalar and a feature weight."""
    values = E.values if isinstance(E, EmbeddingMatrix) else np.asarray(E, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError("embedding has non-finite values")
    if mode == "mean":
        raw = values.mean(axis=1)
    elif mode == "max":
        raw = values.max(axis=1)
    elif mode == "autoencoder":
        ae = Autoencoder(values.shape[1], seed).fit(values)
        raw = ae.encode(values).data[:, 0]
    else:
        raise DataError(f"unknown reduction {mode!r}")
    return Reduction(raw, to_weight_range(raw, *weight_range))


def integrate(X: OmicsMatrix, embedding_or_weights, mode: str = "feature_weight") -> OmicsMatrix:
    """Fold network information into the subject matrix.

    ``feature_weight`` multiplies column j by w_j; ``concatenate`` appends the
    subject representation X @ E after the original columns.
    """
    if mode == "feature_weight":
        w = np.asarray(
            embedding_or_weights.weights if isinstance(embedding_or_weights, Reduction) else embedding_or_weights,
            dtype=np.float64,
        )
        if w.shape != (X.shape[1],):
            raise DataError(f"{len(w)} weights for {X.shape[1]} features")
        return OmicsMatrix(X.subject_ids, X.feature_names, X.modality, X.values * w)
    if mode == "concatenate":
        S = subject_representation(X, embedding_or_weights, "none")
        names = X.feature_names + tuple(f"repr:e{i + 1}" for i in range(S.shape[1]))
        return OmicsMatrix(X.subject_ids, names, X.modality, np.hstack([X.values, S]))
    raise DataError(f"unknown integration mode {mode!r}")


def subject_representation(X: OmicsMatrix, E: EmbeddingMatrix, normalize: str = "row_unit") -> np.ndarray:
    """Subjects x d matrix S = X @ E, optionally scaled to unit row norm."""
    if tuple(X.feature_names) != tuple(E.node_names):
        if len(X.feature_names) != len(E.node_names) or set(X.feature_names) != set(E.node_names):
            raise DataError("matrix columns and embedding nodes differ")
        X = X.columns(E.node_names)
    S = X.values @ E.values
    if normalize == "row_unit":
        norms = np.linalg.norm(S, axis=1, keepdims=True)
        S = np.divide(S, norms, out=np.zeros_like(S), where=norms > 0)
    elif normalize != "none":
        raise DataError(f"unknown normalisation {normalize!r}")
    return S


def write_subject_representation(subject_ids, S: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", *(f"s{i + 1}" for i in range(S.shape[1]))])
        for sid, row in zip(subject_ids, S):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def pca_coords(values: np.ndarray, n_components: int = 2) -> np.ndarray:
    """Project rows onto the top covariance eigenvectors.

    Each eigenvector's sign is fixed so its largest-magnitude entry is positive.
    """
    centered = values - values.mean(axis=0)
    cov = centered.T @ centered / max(len(values) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    vecs = evecs[:, order]
    for k in range(vecs.shape[1]):
        if vecs[np.argmax(np.abs(vecs[:, k])), k] < 0:
            vecs[:, k] = -vecs[:, k]
    coords = centered @ vecs
    if coords.shape[1] < n_components:
        coords = np.hstack([coords, np.zeros((len(values), n_components - coords.shape[1]))])
    return coords


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True)
class PredictorConfig:
    gnn: str = "gcn"
    gnn_layers: int = 2
    gnn_hidden: int = 64
    embedding_dim: int = 32
    num_heads: int = 1
    reduction: str = "mean"
    integration: str = "feature_weight"
    weight_range: tuple[float, float] = (0.5, 1.5)
    classifier_hidden: tuple[int, ...] = (128,)
    optimizer: str = "adam"
    lr: float = 0.01
    epochs: int = 150
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seeds: tuple[int, ...] = tuple(range(10))
    include_clinical: bool = True
    clinical_modality: str = "clinical"

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) <= 0:
            raise ValueError("split fractions must be positive and sum to 1")
        if self.reduction not in ("mean", "max", "autoencoder"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.integration not in ("feature_weight", "concatenate"):
            raise ValueError(f"unknown integration {self.integration!r}")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")


def stratified_split(labels: np.ndarray, fractions, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class shuffled train/validation/test index arrays (each sorted)."""
    rng = np.random.default_rng([seed, 0])
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n_train = int(round(fractions[0] * len(idx)))
        n_val = int(round(fractions[1] * len(idx)))
        parts[0].extend(idx[:n_train])
        parts[1].extend(idx[n_train : n_train + n_val])
        parts[2].extend(idx[n_train + n_val :])
    return tuple(np.sort(np.array(p, dtype=np.int64)) for p in parts)


class JointPredictor:
    def __init__(self, cfg: PredictorConfig, n_features: int, n_extra: int, n_classes: int, seed: int):
        self.cfg = cfg
        layers = layer_stack(
            cfg.gnn, 4, cfg.gnn_hidden, cfg.embedding_dim, cfg.gnn_layers,
            **({"num_heads": cfg.num_heads} if cfg.gnn == "gat" else {}),
        )
        self.encoder = GNNEncoder(layers, seed=seed)
        rng = np.random.default_rng([seed, 2])
        width = n_features + n_extra + (cfg.embedding_dim if cfg.integration == "concatenate" else 0)
        dims = [width, *cfg.classifier_hidden, n_classes]
        self.classifier = [Linear(a, b, rng) for a, b in zip(dims, dims[1:])]
        self.reducer = None

    def parameters(self):
        return self.encoder.parameters() + [p for layer in self.classifier for p in layer.parameters()]

    def pretrain_reducer(self, H, ops, seed: int):
        E0 = self.encoder(H, ops).data
        self.reducer = Autoencoder(E0.shape[1], seed).fit(E0).frozen_encoder()

    def node_weights(self, E: ag.Tensor) -> ag.Tensor:
        mode = self.cfg.reduction
        if mode == "mean":
            raw = ag.tmean(E, axis=1)
        elif mode == "max":
            raw = ag.tmax(E, axis=1)
        else:
            raw = ag.reshape(self.reducer(E), (-1,))
        lo, hi = self.cfg.weight_range
        rmin, rmax = ag.tmin(raw, axis=0), ag.tmax(raw, axis=0)
        scaled = ag.div(ag.sub(raw, rmin), ag.add(ag.sub(rmax, rmin), 1e-12))
        return ag.add(ag.mul(scaled, hi - lo), lo)

    def forward(self, H, ops, X: np.ndarray, extra: np.ndarray | None):
        E = self.encoder(H, ops)
        if self.cfg.integration == "feature_weight":
            parts = [ag.mul(X, self.node_weights(E))]
        else:
            parts = [ag.as_tensor(X), ag.matmul(X, E)]
        if extra is not None and extra.shape[1]:
            parts.append(ag.as_tensor(extra))
        h = parts[0] if len(parts) == 1 else ag.concat(parts, axis=1)
        for i, layer in enumerate(self.classifier):
            h = layer(h)
            if i < len(self.classifier) - 1:
                h = ag.relu(h)
        return h, E

    def snapshot(self):
        return [p.data.copy() for p in self.parameters()]

    def restore(self, state):
        for p, v in zip(self.parameters(), state):
            p.data = v


@dataclass(frozen=True)
class SeedResult:
    seed: int
    metrics: Metrics
    majority_baseline: float
    best_epoch: int
    val_f1_macro: float
    val_accuracy: float
    loss_curve: tuple[float, ...]
    node_weights: np.ndarray | None
    embedding: np.ndarray


@dataclass(frozen=True)
class PredictionReport:
    config: dict
    class_names: tuple[str, ...]
    node_names: tuple[str, ...]
    runs: tuple[SeedResult, ...]

    def _stat(self, attr):
        vals = np.array([getattr(r.metrics, attr) for r in self.runs])
        return float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0

    @property
    def accuracy(self):
        return self._stat("accuracy")

    @property
    def f1_weighted(self):
        return self._stat("f1_weighted")

    @property
    def f1_macro(self):
        return self._stat("f1_macro")

    @property
    def majority_baseline(self) -> float:
        return float(np.mean([r.majority_baseline for r in self.runs]))

    @property
    def val_f1_macro(self) -> float:
        return float(np.mean([r.val_f1_macro for r in self.runs]))

    def summary(self) -> str:
        lines = [f"runs: {len(self.runs)} (seeds {[r.seed for r in self.runs]})"]
        for name in ("accuracy", "f1_weighted", "f1_macro"):
            m, s = getattr(self, name)
            lines.append(f"{name}: {m:.4f} +/- {s:.4f}")
        lines.append(f"majority baseline: {self.majority_baseline:.4f}")
        lines.append(f"classes: {', '.join(self.class_names)}")
        for k, v in self.config.items():
            lines.append(f"config.{k}: {v}")
        return "\n".join(lines) + "\n"

    def write(self, csv_path, summary_path=None) -> None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            k = len(self.class_names)
            w.writerow(
                ["seed", "accuracy", "f1_weighted", "f1_macro", "majority_baseline", "best_epoch", "val_f1_macro"]
                + [f"cm_{i}_{j}" for i in range(k) for j in range(k)]
            )
            for r in self.runs:
                m = r.metrics
                w.writerow(
                    [r.seed, repr(m.accuracy), repr(m.f1_weighted), repr(m.f1_macro), repr(r.majority_baseline),
                     r.best_epoch, repr(r.val_f1_macro)]
                    + [int(v) for v in m.confusion.ravel()]
                )
        if summary_path is not None:
            with open(summary_path, "w", encoding="utf-8") as fh:
                fh.write(self.summary())


def prediction_inputs(dataset: AlignedDataset, graph: FeatureGraph, cfg: PredictorConfig):
    """Subject matrix restricted to graph nodes, and optional clinical covariates."""
    tags = [m.modality for m in dataset.modalities]
    clinical = cfg.clinical_modality if cfg.clinical_modality in tags else None
    omics_tags = [t for t in tags if t != clinical]
    if not omics_tags:
        raise DataError("no omics modalities besides clinical covariates")
    combined = concat_modalities(dataset, omics_tags)
    names = set(combined.feature_names)
    if all(n in names for n in graph.node_names):
        X = combined.columns(graph.node_names)
    else:
        # graph built over a single modality with unprefixed names
        bare = {}
        for m in dataset.modalities:
            if m.modality == clinical:
                continue
            for f in m.feature_names:
                bare.setdefault(f, f"{m.modality}:{f}")
        missing = [n for n in graph.node_names if n not in bare]
        if missing:
            raise DataError(f"graph nodes not found in dataset features: {missing[:5]}")
        X = combined.columns([bare[n] for n in graph.node_names])
        X = OmicsMatrix(X.subject_ids, graph.node_names, X.modality, X.values)
    extra = None
    if clinical is not None and cfg.include_clinical:
        extra = dataset.modality(clinical)
    return X, extra


def _zscore(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [(a - mu) / sd for a in (train, *others)]


def _run_seed(dataset, graph, ops, X: OmicsMatrix, extra, labels, n_classes, cfg: PredictorConfig, seed: int):
    train, val, test = stratified_split(labels, cfg.split, seed)
    for name, idx in (("train", train), ("validation", val), ("test", test)):
        absent = set(range(n_classes)) - set(labels[idx].tolist())
        if absent:
            raise DataError(f"classes {sorted(absent)} missing from the {name} split for seed {seed}; "
                            "try a different split seed or fractions")
    Xtr, Xva, Xte = _zscore(X.values[train], X.values[val], X.values[test])
    if extra is not None:
        Ctr, Cva, Cte = _zscore(extra.values[train], extra.values[val], extra.values[test])
    else:
        Ctr = Cva = Cte = None

    train_ids = [X.subject_ids[i] for i in train]
    y_train = dataset.phenotype.rows(train_ids)
    H = node_feature_matrix(graph, X.rows(train_ids), y_train)

    model = JointPredictor(cfg, X.shape[1], 0 if extra is None else extra.shape[1], n_classes, seed)
    if cfg.reduction == "autoencoder" and cfg.integration == "feature_weight":
        model.pretrain_reducer(H, ops, seed)
    opt = ag.make_optimizer(cfg.optimizer, model.parameters(), cfg.lr)
    ytr, yva, yte = labels[train], labels[val], labels[test]

    best = (-1.0, -np.inf, -1, model.snapshot())  # (val acc, -val loss, epoch, params)
    curve = []
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        logits, _ = model.forward(H, ops, Xtr, Ctr)
        loss = ag.cross_entropy(logits, ytr)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss at epoch {epoch}, seed {seed}, config {asdict(cfg)}")
        curve.append(value)
        loss.backward()
        if cfg.lr:
            opt.step()
        vlogits, _ = model.forward(H, ops, Xva, Cva)
        vloss = float(ag.cross_entropy(vlogits, yva).data)
        vacc = float(np.mean(vlogits.data.argmax(axis=1) == yva))
        if (vacc, -vloss) > best[:2]:
            best = (vacc, -vloss, epoch, model.snapshot())
    model.restore(best[3])

    vlogits, _ = model.forward(H, ops, Xva, Cva)
    val_metrics = compute_metrics(yva, vlogits.data.argmax(axis=1), n_classes)
    tlogits, E = model.forward(H, ops, Xte, Cte)
    metrics = compute_metrics(yte, tlogits.data.argmax(axis=1), n_classes)
    majority = int(np.argmax(np.bincount(ytr, minlength=n_classes)))
    weights = model.node_weights(E).data if cfg.integration == "feature_weight" else None
    return SeedResult(
        seed, metrics, float(np.mean(yte == majority)), best[2], val_metrics.f1_macro, val_metrics.accuracy,
        tuple(curve), weights, E.data,
    )


def predict_phenotype(dataset: AlignedDataset, graph: FeatureGraph, cfg: PredictorConfig = PredictorConfig()) -> PredictionReport:
    """Train and evaluate the joint GNN + classifier over every seed in ``cfg.seeds``."""
    y = dataset.phenotype
    if y.kind != "categorical":
        raise DataError("phenotype prediction supports categorical outcomes only")
    X, extra = prediction_inputs(dataset, graph, cfg)
    ops = GraphOperators.from_graph(graph)
    labels = np.asarray(y.values)
    runs = tuple(_run_seed(dataset, graph, ops, X, extra, labels, y.n_classes, cfg, s) for s in cfg.seeds)
    return PredictionReport(asdict(cfg), y.class_names, graph.node_names, runs)


# ---------------------------------------------------------------- tuning


@dataclass(frozen=True)
class LeaderboardEntry:
    index: int
    params: dict
    val_f1_macro: float
    test_accuracy: float
    test_f1_macro: float


def _coerce(name: str, value):
    if name in ("weight_range", "classifier_hidden", "split", "seeds") and not isinstance(value, tuple):
        return tuple(value) if isinstance(value, (list, tuple)) else (value,)
    return value


def grid_points(grid: dict[str, Sequence], n_random: int | None = None, seed: int = 0) -> list[dict]:
    """Cartesian product in declared key order; optionally a seeded random subset (order kept)."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be non-empty")
    valid = {f.name for f in fields(PredictorConfig)}
    unknown = set(grid) - valid
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}")
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    if n_random is not None and n_random < len(points):
        rng = np.random.default_rng([seed, 3])
        pick = np.sort(rng.choice(len(points), size=n_random, replace=False))
        points = [points[i] for i in pick]
    return points


def tune_hyperparameters(
    dataset: AlignedDataset,
    graph: FeatureGraph,
    grid: dict[str, Sequence],
    base: PredictorConfig = PredictorConfig(),
    seed: int = 0,
    n_random: int | None = None,
) -> tuple[PredictorConfig, list[LeaderboardEntry]]:
    """Pick the grid point with the highest mean validation macro F1 (first wins ties)."""
    board = []
    best_cfg, best_score = None, -np.inf
    for i, point in enumerate(grid_points(grid, n_random, seed)):
        cfg = replace(base, **{k: _coerce(k, v) for k, v in point.items()})
        report = predict_phenotype(dataset, graph, cfg)
        score = report.val_f1_macro
        board.append(LeaderboardEntry(i, point, score, report.accuracy[0], report.f1_macro[0]))
        if score > best_score:
            best_cfg, best_score = cfg, score
    return best_cfg, board


def write_leaderboard(board: Sequence[LeaderboardEntry], path) -> None:
    keys = list(board[0].params) if board else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *keys, "val_f1_macro", "test_accuracy", "test_f1_macro"])
        for e in board:
            w.writerow([e.index, *(e.params[k] for k in keys), repr(e.val_f1_macro), repr(e.test_accuracy),
                        repr(e.test_f1_macro)])
