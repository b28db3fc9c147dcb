import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_modularity, set_partitions

from omicsgraph.community import (
    ConvergenceError,
    greedy_mass_cut,
    hybrid_ppr_louvain,
    louvain,
    modularity,
    personalized_pagerank,
    write_partition_csv,
    write_ppr_csv,
)
from omicsgraph.ingest import DataError, OmicsMatrix, PhenotypeVector
from omicsgraph.netbuild import FeatureGraph, graph_from_dense
from omicsgraph.synthetic import planted_partition_graph

TRIANGLES = [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]


def _graph(n, edges, weights=None):
    names = [f"n{i}" for i in range(n)]
    weights = weights or [1.0] * len(edges)
    A = np.zeros((n, n))
    for (i, j), w in zip(edges, weights):
        A[i, j] = A[j, i] = w
    return graph_from_dense(names, A)


def bridge_graph():
    return _graph(6, TRIANGLES + [(2, 3)])


def test_single_community_is_zero():
    assert modularity(bridge_graph(), [0] * 6) == pytest.approx(0.0, abs=1e-15)


def test_bridge_graph_triangle_split():
    # intra weight 6 of 7; both communities have degree sum 7 of 14: 6/7 - 2 * (1/2)^2
    assert modularity(bridge_graph(), [0, 0, 0, 1, 1, 1]) == pytest.approx(5 / 14, abs=1e-12)


def test_modularity_matches_naive_oracle():
    rng = np.random.default_rng(0)
    for t in range(50):
        n = rng.integers(3, 12)
        A = np.triu(rng.random((n, n)) < 0.4, 1) * rng.uniform(0.1, 2, (n, n))
        A = A + A.T
        if not A.any():
            continue
        labels = rng.integers(0, 3, n)
        assert modularity(graph_from_dense([f"v{i}" for i in range(n)], A), labels) == pytest.approx(
            naive_modularity(A, labels), abs=1e-12)


def test_modularity_empty_graph_errors():
    with pytest.raises(DataError):
        modularity(_graph(3, []), [0, 1, 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1000))
def test_modularity_scale_invariant(seed, factor):
    rng = np.random.default_rng(seed)
    A = np.triu(rng.uniform(0, 1, (7, 7)), 1)
    A = A + A.T
    g = graph_from_dense([f"v{i}" for i in range(7)], A)
    labels = rng.integers(0, 3, 7)
    assert modularity(g.scaled(factor), labels) == pytest.approx(modularity(g, labels), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_disjoint_triangles(seed):
    p = louvain(_graph(6, TRIANGLES), seed=seed)
    assert p.assignment == (0, 0, 0, 1, 1, 1)


def test_bridge_optimum_by_exhaustion():
    g = bridge_graph()
    parts = list(set_partitions(6))
    assert len(parts) == 203
    best = max(modularity(g, p) for p in parts)
    for seed in range(10):
        p = louvain(g, seed=seed)
        assert p.modularity == pytest.approx(5 / 14, abs=1e-12)
        assert p.modularity == pytest.approx(best, abs=1e-12)
        assert p.assignment == (0, 0, 0, 1, 1, 1)


def test_planted_partition_recovery():
    from sklearn.metrics import adjusted_rand_score

    good = 0
    for seed in range(10):
        A, truth = planted_partition_graph([8] * 4, 0.9, 0.05, seed)
        p = louvain(graph_from_dense([f"v{i:02d}" for i in range(32)], A), seed=seed)
        good += adjusted_rand_score(truth, p.assignment) >= 0.9
    assert good >= 9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_louvain_contract(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 20))
    A = np.triu(rng.random((n, n)) < 0.3, 1) * rng.uniform(0.5, 2, (n, n))
    A = A + A.T
    if not A.any():
        A[0, 1] = A[1, 0] = 1.0
    g = graph_from_dense([f"v{i:02d}" for i in range(n)], A)
    p = louvain(g, seed=seed)
    assert sorted(set(p.assignment)) == list(range(p.n_communities))
    assert p.modularity == pytest.approx(modularity(g, p.assignment), abs=1e-12)
    assert p.modularity >= modularity(g, list(range(n))) - 1e-12
    assert all(b >= a - 1e-12 for a, b in zip(p.level_modularity, p.level_modularity[1:]))
    assert louvain(g, seed=seed) == p


def test_louvain_needs_edges():
    with pytest.raises(DataError):
        louvain(_graph(3, []))


def test_resolution_controls_size():
    A, _ = planted_partition_graph([8] * 4, 0.9, 0.05, 0)
    g = graph_from_dense([f"v{i:02d}" for i in range(32)], A)
    assert louvain(g, resolution=0.05).n_communities < louvain(g, resolution=3.0).n_communities


# ---------------------------------------------------------------- PPR


def test_ppr_single_node():
    g = FeatureGraph(("a",), [], [], [])
    assert personalized_pagerank(g, {"a": 1.0}).scores.tolist() == [1.0]


def test_ppr_two_node_closed_form():
    d = 0.85
    # p0 = (1-d) + d p1, p1 = d p0  ->  solve the 2x2 system
    expected = np.linalg.solve(np.array([[1.0, -d], [-d, 1.0]]), np.array([1 - d, 0.0]))
    assert expected == pytest.approx([0.54054, 0.45946], abs=1e-5)
    ppr = personalized_pagerank(_graph(2, [(0, 1)]), {"n0": 1.0}, d)
    assert ppr.scores == pytest.approx(expected, abs=1e-9)


def test_ppr_star_leaves_equal():
    g = _graph(6, [(0, i) for i in range(1, 6)])
    ppr = personalized_pagerank(g, {f"n{i}": 0.2 for i in range(1, 6)})
    assert np.ptp(ppr.scores[1:]) < 1e-12


def test_ppr_convergence_error_carries_residual():
    with pytest.raises(ConvergenceError) as info:
        personalized_pagerank(_graph(4, [(0, 1), (1, 2), (2, 3)]), {"n0": 1.0}, tol=1e-30, max_iter=3)
    assert info.value.residual > 0


def test_ppr_rejects_bad_seeds():
    with pytest.raises(DataError):
        personalized_pagerank(_graph(2, [(0, 1)]), {"n0": 0.5})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95))
def test_ppr_fixed_point_and_conservation(seed, d):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    A = np.triu(rng.random((n, n)) < 0.3, 1) * rng.uniform(0.1, 3, (n, n))
    A = A + A.T
    g = graph_from_dense([f"v{i}" for i in range(n)], A)
    s = rng.dirichlet(np.ones(n))
    ppr = personalized_pagerank(g, s, d)
    p = ppr.scores
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-10
    deg = A.sum(axis=1)
    P = np.divide(A, deg[:, None], out=np.zeros_like(A), where=deg[:, None] > 0)
    fixed = (1 - d) * s + d * (P.T @ p + p[deg == 0].sum() * s)
    assert np.abs(p - fixed).sum() < 1e-9


# ---------------------------------------------------------------- hybrid


def _hybrid_data(n_sub=40, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n_sub)
    X = np.column_stack([y, rng.normal(size=(n_sub, 5))])
    names = ("hub", "a", "b", "c", "d", "e")
    ids = tuple(f"s{i:02d}" for i in range(n_sub))
    return OmicsMatrix(ids, names, "mrna", X), PhenotypeVector(ids, "continuous", y), names


def test_hybrid_retains_correlated_hub():
    X, y, names = _hybrid_data()
    A = np.zeros((6, 6))
    A[0, 1:] = A[1:, 0] = 1.0
    res = hybrid_ppr_louvain(graph_from_dense(names, A), X, y, mass_fraction=0.5)
    assert "hub" in res.retained
    assert res.retained_mass >= 0.5


def test_hybrid_full_mass_equals_plain_louvain():
    X, y, names = _hybrid_data()
    g = _graph(6, TRIANGLES + [(2, 3)])
    g = FeatureGraph(names, g.src, g.dst, g.weight)
    res = hybrid_ppr_louvain(g, X, y, mass_fraction=1.0, seed=3)
    assert set(res.retained) == set(names)
    plain = louvain(g.subgraph(res.retained), seed=3)
    assert res.partition.assignment == plain.assignment


@settings(max_examples=40)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0.01, 1.0))
def test_greedy_cut_is_minimal(raw, frac):
    s = np.array(raw)
    if s.sum() == 0:
        return
    s = s / s.sum()
    names = [f"v{i:02d}" for i in range(len(s))]
    kept = greedy_mass_cut(names, s, frac)
    assert s[kept].sum() >= frac - 1e-12 or len(kept) == np.count_nonzero(s)
    if len(kept) > 1:
        assert s[kept[:-1]].sum() < frac - 1e-12


def test_hybrid_without_signal_errors():
    X, y, names = _hybrid_data()
    X = OmicsMatrix(X.subject_ids, names, "mrna", np.ones_like(X.values))
    with pytest.raises(DataError):
        hybrid_ppr_louvain(FeatureGraph(names, [0], [1], [1.0]), X, y)


def test_csv_writers(tmp_path):
    p = louvain(bridge_graph(), seed=7)
    write_partition_csv(p, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == [
        "node,community", "n0,0", "n1,0", "n2,0", "n3,1", "n4,1", "n5,1"]
    write_ppr_csv(personalized_pagerank(_graph(2, [(0, 1)]), {"n0": 1.0}), tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("node,score\nn0,0.5405")
