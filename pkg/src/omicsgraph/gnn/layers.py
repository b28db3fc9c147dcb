"""GCN, GAT, GraphSAGE and GIN layers over dense graph operators.

Conventions: node features are rows (``H`` is nodes x features) and weights
multiply on the right.  Edge weights enter GCN through the normalised
adjacency and GAT as an additive ``log(w)`` attention bias; SAGE (mean) and
GIN (sum) aggregate over the unweighted neighbour set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..netbuild import FeatureGraph
from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class GraphOperators:
    """Dense propagation matrices precomputed once per graph."""

    n: int
    gcn: np.ndarray  # D~^-1/2 (A + I) D~^-1/2
    binary: np.ndarray  # 0/1 adjacency, zero diagonal
    mean: np.ndarray  # binary adjacency, rows scaled to 1 (zero rows for isolated nodes)
    attn_mask: np.ndarray  # neighbours plus self
    attn_bias: np.ndarray  # log(w) on edges, 0 on the diagonal and elsewhere

    @classmethod
    def from_adjacency(cls, A: np.ndarray) -> "GraphOperators":
        A = np.asarray(A, dtype=np.float64)
        n = A.shape[0]
        A_tilde = A + np.eye(n)
        d = A_tilde.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(d)
        gcn = inv_sqrt[:, None] * A_tilde * inv_sqrt[None, :]
        binary = (A > 0).astype(np.float64)
        np.fill_diagonal(binary, 0.0)
        deg = binary.sum(axis=1)
        mean = np.divide(binary, deg[:, None], out=np.zeros_like(binary), where=deg[:, None] > 0)
        mask = (binary > 0) | np.eye(n, dtype=bool)
        bias = np.zeros_like(A)
        bias[binary > 0] = np.log(A[binary > 0])
        return cls(n, gcn, binary, mean, mask, bias)

    @classmethod
    def from_graph(cls, graph: FeatureGraph) -> "GraphOperators":
        return cls.from_adjacency(graph.adjacency())


def as_operators(graph) -> GraphOperators:
    if isinstance(graph, GraphOperators):
        return graph
    if isinstance(graph, FeatureGraph):
        return GraphOperators.from_graph(graph)
    return GraphOperators.from_adjacency(graph)


def _check(H: Tensor, ops: GraphOperators, W: Tensor):
    if H.shape[0] != ops.n:
        raise ValueError(f"H has {H.shape[0]} rows but the graph has {ops.n} nodes")
    if H.shape[1] != W.shape[0]:
        raise ValueError(f"feature dim {H.shape[1]} does not match weight rows {W.shape[0]}")


def gcn_forward(H, graph, W, b=None) -> Tensor:
    H, W = ag.as_tensor(H), ag.as_tensor(W)
    ops = as_operators(graph)
    _check(H, ops, W)
    out = ag.matmul(ops.gcn, ag.matmul(H, W))
    return out if b is None else ag.add(out, b)


def gat_forward(H, graph, weights, att_src, att_dst, leaky_slope: float = 0.2, return_attention: bool = False):
    """Multi-head graph attention; head outputs are concatenated.

    ``weights[h]`` is f x g_h and ``att_src[h]``/``att_dst[h]`` are length-g_h
    vectors, so the logit for i attending to j is
    LeakyReLU(att_src . Wh_i + att_dst . Wh_j) + log(w_ij).
    """
    H = ag.as_tensor(H)
    ops = as_operators(graph)
    heads, alphas = [], []
    for W, a_s, a_d in zip(weights, att_src, att_dst):
        W = ag.as_tensor(W)
        _check(H, ops, W)
        Z = ag.matmul(H, W)
        s = ag.matmul(Z, ag.reshape(a_s, (-1, 1)))
        t = ag.matmul(Z, ag.reshape(a_d, (-1, 1)))
        logits = ag.add(ag.leaky_relu(ag.add(s, ag.transpose(t)), leaky_slope), ops.attn_bias)
        alpha = ag.masked_softmax(logits, ops.attn_mask, axis=1)
        heads.append(ag.matmul(alpha, Z))
        alphas.append(alpha.data)
    out = heads[0] if len(heads) == 1 else ag.concat(heads, axis=1)
    return (out, alphas) if return_attention else out


def sage_forward(H, graph, W_self, W_neigh, b=None) -> Tensor:
    H, W_self = ag.as_tensor(H), ag.as_tensor(W_self)
    ops = as_operators(graph)
    _check(H, ops, W_self)
    out = ag.add(ag.matmul(H, W_self), ag.matmul(ag.matmul(ops.mean, H), W_neigh))
    return out if b is None else ag.add(out, b)


def gin_forward(H, graph, epsilon=0.0, mlp=None) -> Tensor:
    """MLP((1 + eps) h_i + sum of neighbour h_j); ``mlp=None`` is the identity."""
    H = ag.as_tensor(H)
    ops = as_operators(graph)
    if H.shape[0] != ops.n:
        raise ValueError(f"H has {H.shape[0]} rows but the graph has {ops.n} nodes")
    agg = ag.add(ag.mul(H, ag.add(1.0, epsilon)), ag.matmul(ops.binary, H))
    return agg if mlp is None else mlp(agg)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)), requires_grad=True)


@dataclass(frozen=True)
class GnnLayerConfig:
    kind: str
    in_dim: int
    out_dim: int
    num_heads: int = 1
    leaky_slope: float = 0.2
    epsilon: float = 0.0
    learn_epsilon: bool = True
    aggregator: str = "mean"

    def __post_init__(self):
        if self.kind not in ("gcn", "gat", "sage", "gin"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dims must be positive")
        if self.num_heads < 1:
            raise ValueError("num_heads must be >= 1")
        if self.kind == "gat" and self.out_dim % self.num_heads:
            raise ValueError("gat out_dim must be divisible by num_heads")
        if self.kind == "sage" and self.aggregator != "mean":
            raise ValueError("only the mean aggregator is supported")


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = glorot(rng, in_dim, out_dim)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ag.add(ag.matmul(x, self.W), self.b)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class MLP:
    """Linear -> ReLU -> Linear."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        self.l1 = Linear(in_dim, hidden, rng)
        self.l2 = Linear(hidden, out_dim, rng)

    def __call__(self, x) -> Tensor:
        return self.l2(ag.relu(self.l1(x)))

    def parameters(self) -> list[Tensor]:
        return self.l1.parameters() + self.l2.parameters()


class GCNLayer:
    def __init__(self, cfg: GnnLayerConfig, rng):
        self.W = glorot(rng, cfg.in_dim, cfg.out_dim)
        self.b = Tensor(np.zeros(cfg.out_dim), requires_grad=True)

    def __call__(self, H, ops):
        return gcn_forward(H, ops, self.W, self.b)

    def parameters(self):
        return [self.W, self.b]


class GATLayer:
    def __init__(self, cfg: GnnLayerConfig, rng):
        g = cfg.out_dim // cfg.num_heads
        self.slope = cfg.leaky_slope
        self.W = [glorot(rng, cfg.in_dim, g) for _ in range(cfg.num_heads)]
        self.a_src = [glorot(rng, 2 * g, 1, shape=(g,)) for _ in range(cfg.num_heads)]
        self.a_dst = [glorot(rng, 2 * g, 1, shape=(g,)) for _ in range(cfg.num_heads)]
        self.b = Tensor(np.zeros(cfg.out_dim), requires_grad=True)

    def __call__(self, H, ops):
        return ag.add(gat_forward(H, ops, self.W, self.a_src, self.a_dst, self.slope), self.b)

    def parameters(self):
        return [*self.W, *self.a_src, *self.a_dst, self.b]


class SAGELayer:
    def __init__(self, cfg: GnnLayerConfig, rng):
        self.W_self = glorot(rng, cfg.in_dim, cfg.out_dim)
        self.W_neigh = glorot(rng, cfg.in_dim, cfg.out_dim)
        self.b = Tensor(np.zeros(cfg.out_dim), requires_grad=True)

    def __call__(self, H, ops):
        return sage_forward(H, ops, self.W_self, self.W_neigh, self.b)

    def parameters(self):
        return [self.W_self, self.W_neigh, self.b]


class GINLayer:
    def __init__(self, cfg: GnnLayerConfig, rng):
        self.epsilon = Tensor(np.array(cfg.epsilon), requires_grad=cfg.learn_epsilon)
        self.mlp = MLP(cfg.in_dim, cfg.out_dim, cfg.out_dim, rng)

    def __call__(self, H, ops):
        return gin_forward(H, ops, self.epsilon, self.mlp)

    def parameters(self):
        params = self.mlp.parameters()
        return ([self.epsilon] if self.epsilon.requires_grad else []) + params


LAYERS = {"gcn": GCNLayer, "gat": GATLayer, "sage": SAGELayer, "gin": GINLayer}


def build_layer(cfg: GnnLayerConfig, rng: np.random.Generator):
    return LAYERS[cfg.kind](cfg, rng)


def layer_stack(kind: str, in_dim: int, hidden: int, out_dim: int, num_layers: int = 2, **kw) -> list[GnnLayerConfig]:
    """Configs for ``num_layers`` layers of one kind: in -> hidden -> ... -> out."""
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    dims = [in_dim] + [hidden] * (num_layers - 1) + [out_dim]
    return [GnnLayerConfig(kind, dims[i], dims[i + 1], **kw) for i in range(num_layers)]


@dataclass
class GNNEncoder:
    """Stacked layers, ReLU between them and nothing after the last."""

    configs: list[GnnLayerConfig]
    seed: int = 0
    layers: list = field(init=False)

    def __post_init__(self):
        for a, b in zip(self.configs, self.configs[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        rng = np.random.default_rng(self.seed)
        self.layers = [build_layer(c, rng) for c in self.configs]

    def __call__(self, H, ops) -> Tensor:
        out = ag.as_tensor(H)
        for i, layer in enumerate(self.layers):
            out = layer(out, ops)
            if i < len(self.layers) - 1:
                out = ag.relu(out)
        return out

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def out_dim(self) -> int:
        return self.configs[-1].out_dim
