import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_abs_corr, oracle_cosine, oracle_euclid, oracle_knn_edges, oracle_r2

from omicsgraph.ingest import DataError, OmicsMatrix
from omicsgraph.netbuild import (
    FeatureGraph,
    cosine_similarity_matrix,
    correlation_network,
    export_edgelist,
    export_graphml,
    import_network,
    knn_graph,
    knn_lists,
    read_node_order,
    similarity_network,
    snn_graph,
    soft_threshold_network,
    write_node_order,
)


def _X(values, names=None):
    values = np.asarray(values, dtype=float)
    names = names or [f"f{j:02d}" for j in range(values.shape[1])]
    return OmicsMatrix(tuple(f"s{i:03d}" for i in range(values.shape[0])), tuple(names), "mrna", values)


def _dense(graph):
    return graph.adjacency()



# ---------------------------------------------------------------- similarity


def test_cosine_examples():
    g = similarity_network(_X([[1.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]]))
    A = _dense(g)
    assert A[0, 1] == pytest.approx(1.0)
    assert A[0, 2] == 0.0
    assert A[0, 3] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    pruned = similarity_network(_X([[1.0, 0.0], [0.0, 1.0]]), threshold=1e-9)
    assert pruned.n_edges == 0


def test_threshold_outside_range_errors():
    with pytest.raises(DataError):
        similarity_network(_X(np.eye(3)), threshold=1.5)


def test_zero_norm_feature_is_isolated_and_flagged():
    g = similarity_network(_X([[1.0, 0.0, 2.0], [3.0, 0.0, 1.0]], ["a", "z", "b"]))
    assert g.flags == ("z",)
    assert _dense(g)[1].sum() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_builders_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 30))
    names = [f"f{j:02d}" for j in range(30)]
    m = _X(X, names)
    cos = oracle_cosine(X)
    np.testing.assert_allclose(_dense(similarity_network(m)), np.where(cos > 0, cos, 0), atol=1e-10, rtol=0)
    np.testing.assert_allclose(_dense(similarity_network(m, "euclidean")), oracle_euclid(X), atol=1e-10, rtol=0)
    pear = oracle_abs_corr(X)
    np.testing.assert_allclose(_dense(correlation_network(m)), pear, atol=1e-10, rtol=0)
    np.testing.assert_allclose(_dense(correlation_network(m, "spearman")), oracle_abs_corr(X, True), atol=1e-10,
                               rtol=0)
    st_graph, _, report = soft_threshold_network(m, beta_grid=[1.0, 2.0, 3.0])
    beta = st_graph.meta["beta"]
    np.testing.assert_allclose(_dense(st_graph), pear**beta, atol=1e-10, rtol=0)
    k = 5
    edges, lists = oracle_knn_edges(cos, names, k)
    g = knn_graph(m, k)
    got = {(int(i), int(j)) for i, j in zip(g.src, g.dst)}
    assert got == {e for e in edges if cos[e] > 0}
    for i, j, w in zip(g.src, g.dst, g.weight):
        assert w == pytest.approx(cos[i, j], abs=1e-10)
    snn = _dense(snn_graph(m, k))
    for i in range(30):
        for j in range(i + 1, 30):
            a, b = set(lists[i]), set(lists[j])
            assert snn[i, j] == pytest.approx(len(a & b) / len(a | b), abs=1e-10)


# ---------------------------------------------------------------- correlation


def test_spearman_rank_invariance_and_sign():
    x = np.linspace(-2, 3, 15)
    A = _dense(correlation_network(_X(np.column_stack([x, np.exp(x), -x]))))
    S = _dense(correlation_network(_X(np.column_stack([x, np.exp(x), -x])), "spearman"))
    assert S[0, 1] == pytest.approx(1.0) and A[0, 1] < 1.0
    assert A[0, 2] == pytest.approx(1.0)


def test_constant_feature_flagged_not_fatal():
    g = correlation_network(_X([[1.0, 5.0, 2.0], [2.0, 5.0, 1.0], [3.0, 5.0, 7.0]]))
    assert g.flags == ("f01",)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100), st.floats(-100, 100))
def test_correlation_affine_invariance(seed, scale, shift):
    X = np.random.default_rng(seed).normal(size=(10, 6))
    Y = X.copy()
    Y[:, 2] = scale * Y[:, 2] + shift
    np.testing.assert_allclose(_dense(correlation_network(_X(Y))), _dense(correlation_network(_X(X))), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_builders_ignore_subject_order(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(9, 7))
    perm = rng.permutation(9)
    for build in (similarity_network, correlation_network, lambda m: knn_graph(m, 3), lambda m: snn_graph(m, 3)):
        a, b = build(_X(X)), build(_X(X[perm]))
        np.testing.assert_allclose(_dense(a), _dense(b), atol=1e-12)


def test_top_fraction_keeps_strongest():
    X = np.random.default_rng(4).normal(size=(10, 8))
    full = correlation_network(_X(X))
    top = correlation_network(_X(X), top_fraction=0.25)
    assert top.n_edges == math.ceil(0.25 * full.n_edges)
    assert top.weight.min() >= np.sort(full.weight)[::-1][top.n_edges - 1]


# ---------------------------------------------------------------- soft threshold


def test_soft_threshold_beta_one_equals_correlation():
    X = np.random.default_rng(9).normal(size=(20, 25))
    g, beta, _ = soft_threshold_network(_X(X), beta_grid=[1.0], target_r2=0.0)
    c = correlation_network(_X(X))
    assert beta == 1.0
    assert g.edges() == c.edges()


def test_soft_threshold_degenerate_errors():
    # orthonormal centred columns u0..u5; x_i = u0 + u_i gives |r| = 1/2 for every pair
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(np.column_stack([np.ones(30), rng.normal(size=(30, 6))]))
    U = U[:, 1:]
    X = U[:, [0]] + U[:, 1:]
    assert np.allclose(np.abs(np.corrcoef(X, rowvar=False)[np.triu_indices(5, 1)]), 0.5)
    with pytest.raises(DataError, match="connectivity"):
        soft_threshold_network(_X(X))


def test_hub_network_picks_steeper_beta_and_fit_matches_oracle():
    rng = np.random.default_rng(0)
    hub = rng.normal(size=100)
    F = 0.9 * hub[:, None] + np.sqrt(1 - 0.81) * rng.normal(size=(100, 50))
    X = np.column_stack([hub, F])
    _, beta, report = soft_threshold_network(_X(X))
    assert beta > 1
    R = oracle_abs_corr(X)
    for fit in report:
        assert fit.r2 == pytest.approx(oracle_r2((R**fit.beta).sum(axis=1)), abs=1e-9)


# ---------------------------------------------------------------- kNN / SNN


def test_knn_line_example():
    # 1-D points 0, 1, 3 (same value in both subjects so distances are sqrt(2) apart scaled)
    X = _X([[0.0, 1.0, 3.0], [0.0, 1.0, 3.0]], ["p0", "p1", "p3"])
    g = knn_graph(X, 1, metric="euclidean")
    assert {(g.node_names[i], g.node_names[j]) for i, j in zip(g.src, g.dst)} == {("p0", "p1"), ("p1", "p3")}


def test_knn_saturation_and_default():
    X = _X(np.random.default_rng(0).uniform(1, 2, size=(5, 6)))
    assert knn_graph(X, 5).n_edges == 15
    assert knn_graph.__defaults__[:2] == (15, "cosine")


@pytest.mark.parametrize("k", [0, 6, 7])
def test_knn_bad_k(k):
    with pytest.raises(DataError):
        knn_graph(_X(np.ones((3, 6)) + np.eye(3, 6)), k)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_knn_lists_have_exactly_k(seed, k):
    S = np.random.default_rng(seed).normal(size=(8, 8))
    lists = knn_lists(S, [f"n{i}" for i in range(8)], k)
    assert all(len(nb) == k and i not in nb for i, nb in enumerate(lists))


def test_knn_ties_broken_by_name():
    S = np.ones((4, 4))
    assert knn_lists(S, ["d", "c", "b", "a"], 1) == [[3], [3], [3], [2]]


def test_snn_identical_and_disjoint_lists():
    # cosine neighbours: f0 and f1 point one way, f2 and f3 the opposite way
    X = _X([[1.0, 1.1, -1.0, -1.1], [1.1, 1.0, -1.1, -1.0]])
    A = _dense(snn_graph(X, 1))
    assert A[0, 2] == 0.0  # lists {f1} and {f3}
    # explicit similarity matrix, k=2
    lists = knn_lists(np.array([[0, 5, 4, 1], [5, 0, 4, 1], [4, 4, 0, 3], [1, 3, 4, 0]], float), list("abcd"), 2)
    assert lists == [[1, 2], [0, 2], [0, 1], [2, 1]]
    # Jaccard over those lists: {b,c} vs {a,c} shares 1 of 3; {b,c} vs {c,b} shares 2 of 2
    assert len({1, 2} & {0, 2}) / len({1, 2} | {0, 2}) == pytest.approx(1 / 3)


def test_snn_weights_are_jaccard_of_lists():
    X = np.random.default_rng(5).normal(size=(8, 7))
    S, _ = cosine_similarity_matrix(X)
    lists = knn_lists(S, [f"f{j:02d}" for j in range(7)], 3)
    A = _dense(snn_graph(_X(X), 3))
    for i in range(7):
        for j in range(i + 1, 7):
            a, b = set(lists[i]), set(lists[j])
            assert A[i, j] == pytest.approx(len(a & b) / len(a | b))
    # {a,b,c,d} vs {c,d,e,f}
    assert len(set("abcd") & set("cdef")) / len(set("abcd") | set("cdef")) == pytest.approx(2 / 6)


# ---------------------------------------------------------------- import / export


def test_import_symmetrises_and_rejects(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("a,b,0.5\nb,a,0.5\nb,c,1\n")
    g = import_network(p)
    assert g.edges() == [("a", "b", 0.5), ("b", "c", 1.0)]
    for body in ("a,a,1\n", "a,b,0\n", "a,b,1\nb,a,2\n"):
        p.write_text(body)
        with pytest.raises(DataError):
            import_network(p)
    p.write_text("a,q,1\n")
    with pytest.raises(DataError, match="unknown"):
        import_network(p, ["a", "b"])


def test_export_import_is_identity(tmp_path):
    X = np.random.default_rng(0).normal(size=(10, 12))
    g = correlation_network(_X(X), top_fraction=0.3)
    export_edgelist(g, tmp_path / "e.csv")
    write_node_order(g, tmp_path / "n.txt")
    back = import_network(tmp_path / "e.csv", read_node_order(tmp_path / "n.txt"))
    assert back.node_names == g.node_names and back.edges() == g.edges()


def test_graphml_export(tmp_path):
    import networkx as nx

    g = knn_graph(_X(np.random.default_rng(1).normal(size=(6, 5))), 2)
    g = g.with_attrs(np.arange(10.0).reshape(5, 2))
    export_graphml(g, tmp_path / "g.graphml")
    h = nx.read_graphml(tmp_path / "g.graphml")
    assert sorted(h.nodes) == sorted(g.node_names) and h.number_of_edges() == g.n_edges


def test_feature_graph_rejects_bad_edges():
    with pytest.raises(DataError):
        FeatureGraph(("a", "b"), [1], [0], [1.0])
    with pytest.raises(DataError):
        FeatureGraph(("a", "b"), [0], [1], [-1.0])
    with pytest.raises(DataError):
        FeatureGraph(("a", "b"), [0, 0], [1, 1], [1.0, 1.0])
