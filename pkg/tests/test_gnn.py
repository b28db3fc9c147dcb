import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omicsgraph.gnn import autograd as ag
from omicsgraph.gnn.autograd import Tensor
from omicsgraph.gnn.gradcheck import check_gradients, layer_gradient_errors, random_graph
from omicsgraph.gnn.layers import (
    GnnLayerConfig,
    GNNEncoder,
    GraphOperators,
    build_layer,
    gat_forward,
    gcn_forward,
    gin_forward,
    layer_stack,
    sage_forward,
)
from omicsgraph.gnn.train import (
    EmbedConfig,
    EmbeddingMatrix,
    NumericError,
    node_feature_matrix,
    raw_node_attributes,
    read_embeddings_csv,
    train_embedder,
    write_embeddings_csv,
)
from omicsgraph.ingest import DataError, OmicsMatrix, PhenotypeVector
from omicsgraph.netbuild import graph_from_dense
from omicsgraph.synthetic import planted_partition_graph

EDGE = np.array([[0.0, 1.0], [1.0, 0.0]])
EYE2 = np.eye(2)


# ---------------------------------------------------------------- autodiff core


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_elementwise_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    c = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def loss():
        x = ag.div(ag.mul(ag.add(a, b), ag.log(a)), ag.add(ag.exp(ag.tanh(b)), 1.0))
        y = ag.matmul(ag.softplus(ag.sub(x, ag.power(a, 2.0))), c)
        z = ag.concat([ag.tmax(y, axis=1, keepdims=True), ag.tmean(y, axis=0, keepdims=True).T], axis=0)
        return ag.tsum(ag.leaky_relu(z, 0.1)) + ag.tsum(ag.take(y, [0, 2, 2]))

    assert max(check_gradients(loss, [a, b, c])) < 1e-6


def test_losses_match_finite_differences():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    labels = np.array([0, 2, 1, 1, 0])
    errs = check_gradients(lambda: ag.cross_entropy(logits, labels), [logits])
    errs += check_gradients(lambda: ag.bce_with_logits(ag.tsum(logits, axis=1), np.array([1, 0, 1, 0, 1.0])),
                            [logits])
    errs += check_gradients(lambda: ag.mse(logits, np.ones((5, 3))), [logits])
    mask = rng.random((5, 3)) < 0.6
    mask[:, 0] = True
    R = rng.normal(size=(5, 3))
    errs += check_gradients(lambda: ag.tsum(ag.mul(ag.masked_softmax(logits, mask, axis=1), R)), [logits])
    assert max(errs) < 1e-6


def test_cross_entropy_value():
    logits = Tensor(np.array([[0.0, np.log(3.0)]]))
    assert float(ag.cross_entropy(logits, np.array([1])).data) == pytest.approx(-np.log(0.75))


def test_masked_softmax_ignores_huge_masked_logits():
    logits = Tensor(np.array([[1.0, 1e308, 2.0]]))
    p = ag.masked_softmax(logits, np.array([[True, False, True]]), axis=1).data
    assert np.all(np.isfinite(p)) and p[0, 1] == 0.0 and p.sum() == pytest.approx(1.0)


def test_gradient_accumulates_through_shared_node():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = ag.mul(x, x)
    ag.add(y, y).backward()
    assert float(x.grad) == pytest.approx(12.0)


def test_adam_and_sgd_minimise_quadratic():
    for make in (lambda p: ag.SGD(p, lr=0.1, momentum=0.5), lambda p: ag.Adam(p, lr=0.1)):
        w = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = make([w])
        for _ in range(300):
            opt.zero_grad()
            ag.tsum(ag.power(ag.sub(w, 1.0), 2.0)).backward()
            opt.step()
        assert w.data == pytest.approx([1.0, 1.0], abs=1e-3)


# ---------------------------------------------------------------- layer examples


def test_gcn_examples():
    assert gcn_forward(EYE2, EDGE, EYE2).data == pytest.approx(np.full((2, 2), 0.5))
    H = np.random.default_rng(0).normal(size=(3, 2))
    assert gcn_forward(H, np.zeros((3, 3)), EYE2).data == pytest.approx(H)


@pytest.mark.parametrize("seed", range(20))
def test_gcn_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    A = random_graph(n, rng)
    H, W, b = rng.normal(size=(n, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    At = A + np.eye(n)
    d = At.sum(axis=1)
    D = np.diag(d**-0.5)
    assert gcn_forward(H, A, W, b).data == pytest.approx(D @ At @ D @ H @ W + b, abs=1e-10)


def test_gat_zero_attention_is_neighbourhood_mean():
    rng = np.random.default_rng(0)
    A = (random_graph(5, rng) > 0).astype(float)
    H, W = rng.normal(size=(5, 3)), rng.normal(size=(3, 2))
    out = gat_forward(H, A, [W], [np.zeros(2)], [np.zeros(2)]).data
    M = A + np.eye(5)
    assert out == pytest.approx((M / M.sum(axis=1, keepdims=True)) @ H @ W, abs=1e-12)


def test_gat_isolated_node_attends_to_itself():
    rng = np.random.default_rng(1)
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1.0
    H, W = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
    out = gat_forward(H, A, [W], [rng.normal(size=2)], [rng.normal(size=2)]).data
    assert out[2] == pytest.approx(H[2] @ W)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gat_attention_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    A = random_graph(7, rng)
    Ws = [rng.normal(size=(3, 2)) for _ in range(2)]
    _, alphas = gat_forward(rng.normal(size=(7, 3)), A, Ws, [rng.normal(size=2)] * 2, [rng.normal(size=2)] * 2,
                            return_attention=True)
    for alpha in alphas:
        assert np.abs(alpha.sum(axis=1) - 1).max() < 1e-12
        assert np.all(alpha[(A == 0) & ~np.eye(7, dtype=bool)] == 0)


def test_sage_examples():
    assert sage_forward(EYE2, EDGE, EYE2, EYE2).data == pytest.approx(np.ones((2, 2)))
    rng = np.random.default_rng(0)
    H, Ws, Wn, b = rng.normal(size=(3, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=2)
    assert sage_forward(H, np.zeros((3, 3)), Ws, Wn, b).data == pytest.approx(H @ Ws + b)


def test_sage_ignores_edge_weights():
    rng = np.random.default_rng(2)
    A = random_graph(5, rng)
    A2 = np.where(A > 0, A * 3.7, 0.0)
    args = rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    assert sage_forward(args[0], A, *args[1:]).data == pytest.approx(sage_forward(args[0], A2, *args[1:]).data)


def test_gin_examples():
    assert gin_forward(EYE2, EDGE).data == pytest.approx(np.ones((2, 2)))
    H = np.random.default_rng(0).normal(size=(3, 2))
    assert gin_forward(H, np.zeros((3, 3))).data == pytest.approx(H)


def test_gin_sum_aggregation_against_dense_oracle():
    # centre node 0 sees neighbours {h, h} in one graph and a single neighbour 2h in the other
    h = np.array([1.0, -0.5])
    H1 = np.array([[0.3, 0.2], h, h])
    A1 = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], float)
    H2 = np.array([[0.3, 0.2], 2 * h, [0.0, 0.0]])
    A2 = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], float)
    eps = 0.25
    for H, A in ((H1, A1), (H2, A2)):
        assert gin_forward(H, A, eps).data == pytest.approx((1 + eps) * H + A @ H)
    # same neighbour sum at node 0; the neighbours' own outputs differ
    assert gin_forward(H1, A1, eps).data[0] == pytest.approx(gin_forward(H2, A2, eps).data[0])
    assert not np.allclose(gin_forward(H1, A1, eps).data[1], gin_forward(H2, A2, eps).data[1])


@pytest.mark.parametrize("kind", ["gcn", "gat", "sage", "gin"])
@pytest.mark.parametrize("seed", range(5))
def test_layer_gradients(kind, seed):
    assert max(layer_gradient_errors(kind, seed)) < 1e-4


@pytest.mark.parametrize("kind", ["gcn", "gat", "sage", "gin"])
def test_encoder_gradients_two_layers(kind):
    rng = np.random.default_rng(3)
    ops = GraphOperators.from_adjacency(random_graph(6, rng))
    kw = {"num_heads": 2} if kind == "gat" else {}
    enc = GNNEncoder(layer_stack(kind, 3, 4, 2, 2, **kw), seed=1)
    H, R = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    assert max(check_gradients(lambda: ag.tsum(ag.mul(enc(H, ops), R)), enc.parameters())) < 1e-4


@pytest.mark.parametrize("kind", ["gcn", "gat", "sage", "gin"])
def test_node_relabelling_equivariance(kind):
    rng = np.random.default_rng(4)
    A = random_graph(7, rng)
    H = rng.normal(size=(7, 3))
    perm = rng.permutation(7)
    kw = {"num_heads": 2} if kind == "gat" else {}
    enc = GNNEncoder(layer_stack(kind, 3, 4, 4, 2, **kw), seed=0)
    out = enc(H, GraphOperators.from_adjacency(A)).data
    out_p = enc(H[perm], GraphOperators.from_adjacency(A[np.ix_(perm, perm)])).data
    assert out_p == pytest.approx(out[perm], abs=1e-10)


def test_forward_leaves_inputs_untouched():
    rng = np.random.default_rng(5)
    A = random_graph(5, rng)
    H = rng.normal(size=(5, 3))
    A0, H0 = A.copy(), H.copy()
    for kind in ("gcn", "gat", "sage", "gin"):
        build_layer(GnnLayerConfig(kind, 3, 2), rng)(H, GraphOperators.from_adjacency(A))
    np.testing.assert_array_equal(A, A0)
    np.testing.assert_array_equal(H, H0)


def test_layer_config_validation():
    with pytest.raises(ValueError):
        GnnLayerConfig("gat", 3, 5, num_heads=2)
    with pytest.raises(ValueError):
        GnnLayerConfig("gcn", 0, 5)
    with pytest.raises(ValueError):
        GnnLayerConfig("transformer", 3, 5)


def test_shape_mismatch_errors():
    with pytest.raises(ValueError):
        gcn_forward(np.ones((3, 2)), EDGE, EYE2)
    with pytest.raises(ValueError):
        sage_forward(np.ones((2, 3)), EDGE, EYE2, EYE2)


# ---------------------------------------------------------------- node attributes and training


def _omics(values, names):
    ids = tuple(f"s{i}" for i in range(values.shape[0]))
    return OmicsMatrix(ids, tuple(names), "mrna", values)


def test_node_attributes_degenerate_and_standardised():
    rng = np.random.default_rng(0)
    V = rng.normal(size=(30, 6))
    V[:, 2] = 4.0
    X = _omics(V, [f"g{i}" for i in range(6)])
    y = PhenotypeVector(X.subject_ids, "continuous", rng.normal(size=30))
    g = graph_from_dense(X.feature_names, random_graph(6, rng))
    raw = raw_node_attributes(g, X, y)
    assert raw[2, 1] == 0.0 and raw[2, 2] == 0.0
    Z = node_feature_matrix(g, X, y)
    assert Z.shape == (6, 4)
    for col in Z.T:
        if np.ptp(col) > 0:
            assert abs(col.mean()) < 1e-12 and abs(col.std() - 1) < 1e-9


def test_node_missing_from_matrix_errors():
    X = _omics(np.ones((3, 2)), ["a", "b"])
    g = graph_from_dense(["a", "c"], EDGE)
    with pytest.raises(DataError):
        node_feature_matrix(g, X, None)


def _two_block(seed):
    A, labels = planted_partition_graph([10, 10], 0.8, 0.02, seed)
    names = [f"v{i:02d}" for i in range(20)]
    return graph_from_dense(names, A), labels


def test_zero_lr_regression_keeps_initial_embedding():
    g, _ = _two_block(0)
    H = np.random.default_rng(0).normal(size=(20, 4))
    cfg = EmbedConfig(hidden=8, dim=4, lr=0.0, epochs=5, objective="phenotype_regression")
    E = train_embedder(g, H, cfg, targets=np.linspace(0, 1, 20))
    assert len(set(E.loss_curve)) == 1
    init = GNNEncoder(cfg.layers(4), seed=cfg.seed)(H, GraphOperators.from_graph(g)).data
    np.testing.assert_array_equal(E.values, init)


def test_two_block_reconstruction_separates_blocks():
    wins = 0
    for seed in range(10):
        g, labels = _two_block(seed)
        H = np.random.default_rng(seed).normal(size=(20, 4))
        E = train_embedder(g, H, EmbedConfig(hidden=16, dim=8, epochs=150, optimizer="adam", seed=seed)).values
        U = E / np.linalg.norm(E, axis=1, keepdims=True)
        C = U @ U.T
        same = labels[:, None] == labels[None, :]
        off = ~np.eye(20, dtype=bool)
        wins += C[same & off].mean() > C[~same].mean()
    assert wins >= 9


def test_training_is_deterministic(tmp_path):
    g, _ = _two_block(1)
    H = np.random.default_rng(1).normal(size=(20, 4))
    cfg = EmbedConfig(kind="gat", num_heads=2, hidden=8, dim=4, epochs=20, seed=3)
    a, b = train_embedder(g, H, cfg), train_embedder(g, H, cfg)
    write_embeddings_csv(a, tmp_path / "a.csv")
    write_embeddings_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert read_embeddings_csv(tmp_path / "a.csv").values.tolist() == a.values.tolist()


def test_training_errors():
    g, _ = _two_block(0)
    H = np.ones((20, 4))
    with pytest.raises(ValueError):
        EmbedConfig(epochs=0)
    with pytest.raises(DataError):
        train_embedder(g, H, EmbedConfig(objective="phenotype_regression", epochs=1))
    with pytest.raises(NumericError), np.errstate(over="ignore", invalid="ignore"):
        train_embedder(g, np.random.default_rng(0).normal(size=(20, 4)) * 1e3,
                       EmbedConfig(objective="phenotype_regression", lr=1e6, epochs=50),
                       targets=np.ones(20) * 1e3)


def test_embedding_matrix_rejects_nan():
    with pytest.raises(NumericError):
        EmbeddingMatrix(("a",), np.array([[np.nan]]))
