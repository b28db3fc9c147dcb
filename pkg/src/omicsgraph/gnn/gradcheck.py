"""Central finite-difference checks of the autodiff gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import GnnLayerConfig, GraphOperators, build_layer


def random_graph(n: int, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    """Symmetric weighted adjacency with edge weights in [0.5, 2]."""
    A = np.triu((rng.random((n, n)) < p) * rng.uniform(0.5, 2.0, (n, n)), 1)
    return A + A.T


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    The floor matters for gradients that are exactly zero, e.g. a GAT source
    attention vector when every logit in a row has the same sign (softmax is
    shift-invariant), where finite differences only return round-off noise.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(loss: Callable[[], float], param: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat, gflat = param.data.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss()
        flat[i] = orig - step
        down = loss()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(build_loss: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> list[float]:
    """Relative error between backprop and finite differences for each parameter."""
    for p in params:
        p.zero_grad()
    build_loss().backward()
    analytic = [p.grad.copy() for p in params]
    value = lambda: float(build_loss().data)
    return [relative_error(a, numeric_gradient(value, p, step)) for a, p in zip(analytic, params)]


def layer_gradient_errors(kind: str, seed: int, n_nodes: int = 6, in_dim: int = 3, out_dim: int = 4,
                          step: float = 1e-5) -> list[float]:
    """Gradient errors for every parameter of one layer on a seeded random graph.

    The loss is sum(tanh(layer(H)) * R) for fixed random H and R, which
    exercises every output entry with distinct weights.
    """
    rng = np.random.default_rng(seed)
    ops = GraphOperators.from_adjacency(random_graph(n_nodes, rng))
    extra = {"num_heads": 2} if kind == "gat" else {}
    if kind == "gin":
        extra["epsilon"] = 0.1
    layer = build_layer(GnnLayerConfig(kind, in_dim, out_dim, **extra), rng)
    H = rng.normal(size=(n_nodes, in_dim))
    R = rng.normal(size=(n_nodes, out_dim))
    for p in layer.parameters():
        # move biases off zero so every parameter has a generic value
        p.data[...] = p.data + 0.1 * rng.normal(size=p.data.shape)
    loss = lambda: ag.tsum(ag.mul(ag.tanh(layer(Tensor(H), ops)), R))
    return check_gradients(loss, layer.parameters(), step)
