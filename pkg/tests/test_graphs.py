import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagcn.graphs import (
    ConfigurationError,
    StratificationError,
    TUFormatError,
    build_features,
    load_tu_dataset,
    normalize_adjacency,
    stratified_kfold,
)

from .conftest import write_tu


def random_adjacency(rng, n, p=0.3):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(np.int8)


def test_normalize_examples():
    assert normalize_adjacency(np.zeros((1, 1))).tolist() == [[1.0]]
    assert normalize_adjacency(np.array([[0, 1], [1, 0]])).tolist() == [[0.5, 0.5], [0.5, 0.5]]


def test_normalize_path_graph_by_hand():
    # degrees with self-loop: 2, 3, 2
    expected = [[1 / 2, 1 / 3, 0], [1 / 2, 1 / 3, 1 / 2], [0, 1 / 3, 1 / 2]]
    out = normalize_adjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    assert np.max(np.abs(out - expected)) <= 1e-15


def test_normalize_columns_sum_to_one_on_1000_graphs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        out = normalize_adjacency(random_adjacency(rng, int(rng.integers(1, 12)), rng.random()))
        assert np.all(out >= 0)
        assert np.max(np.abs(out.sum(axis=0) - 1.0)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_normalize_is_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    a = random_adjacency(rng, n, 0.4)
    perm = rng.permutation(n)
    p = np.eye(n)[perm]
    lhs = normalize_adjacency(p @ a @ p.T)
    rhs = p @ normalize_adjacency(a) @ p.T
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@pytest.mark.parametrize("bad", [
    np.array([[0, 1], [0, 0]]),
    np.array([[1, 0], [0, 0]]),
    np.array([[0, 2], [2, 0]]),
])
def test_normalize_rejects_invalid_input(bad):
    with pytest.raises(ValueError):
        normalize_adjacency(bad)


def test_one_hot_features():
    x = build_features(np.array([4, 1, 9, 1]), "one-hot", alphabet=[1, 4, 9])
    assert x.shape == (4, 3)
    assert np.all(x.sum(axis=1) == 1)
    assert x[:, 0].tolist() == [0, 1, 0, 1]
    with pytest.raises(ConfigurationError):
        build_features(None, "one-hot")


def test_degree_features():
    adj = np.zeros((3, 3))
    adj[0, 1] = adj[1, 0] = 1
    x = build_features(None, "degree", adjacency=adj, degree_cap=4)
    assert x.shape == (3, 5)
    assert x[2].tolist() == [1, 0, 0, 0, 0]  # isolated node in the degree-0 bucket
    assert np.all(x.sum(axis=1) == 1)
    star = np.zeros((8, 8))
    star[0, 1:] = star[1:, 0] = 1
    assert build_features(None, "degree", adjacency=star, degree_cap=4)[0, 4] == 1  # overflow


def test_load_toy(toy_tu):
    ds = load_tu_dataset(toy_tu, "TOY")
    assert len(ds) == 2 and ds.num_classes == 2
    assert ds.label_map == {-1: 0, 5: 1}
    tri, edge = ds.graphs
    assert tri.label == 1 and edge.label == 0
    assert tri.adjacency.tolist() == [[0, 1, 1], [1, 0, 1], [1, 1, 0]]
    assert edge.adjacency.tolist() == [[0, 1], [1, 0]]
    # global alphabet {0, 2, 7}
    assert ds.feature_dim == 3
    assert edge.features.tolist() == [[0, 0, 1], [1, 0, 0]]


def test_load_degree_fallback(tmp_path):
    d = write_tu(tmp_path / "NL", "NL", edges=[(1, 2)], indicator=[1, 1, 1, 2],
                 graph_labels=[0, 1])
    ds = load_tu_dataset(d, "NL", degree_cap=3)
    assert ds.feature_dim == 4
    assert ds.graphs[0].features[2].tolist() == [1, 0, 0, 0]  # isolated node kept
    assert ds.graphs[1].n == 1


def test_load_tolerates_whitespace_and_blank_tail(tmp_path):
    d = tmp_path / "WS"
    write_tu(d, "WS", edges=[], indicator=[1, 1, 2, 2], graph_labels=[0, 1])
    (d / "WS_A.txt").write_text("1 ,2\n  3,   4  \n\n")
    ds = load_tu_dataset(d, "WS")
    assert ds.graphs[0].adjacency.tolist() == [[0, 1], [1, 0]]


def test_missing_file_is_named(toy_tu):
    (toy_tu / "TOY_graph_labels.txt").unlink()
    with pytest.raises(FileNotFoundError, match="TOY_graph_labels.txt"):
        load_tu_dataset(toy_tu, "TOY")


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere"):
        load_tu_dataset(tmp_path / "nowhere", "X")


def test_cross_graph_edge_reports_line(toy_tu):
    (toy_tu / "TOY_A.txt").write_text("1, 2\n2, 4\n")
    with pytest.raises(TUFormatError, match=r"TOY_A.txt:2") as info:
        load_tu_dataset(toy_tu, "TOY")
    assert info.value.line == 2


def test_out_of_range_node_reports_line(toy_tu):
    (toy_tu / "TOY_A.txt").write_text("1, 2\n2, 3\n4, 99\n")
    with pytest.raises(TUFormatError, match=r"TOY_A.txt:3"):
        load_tu_dataset(toy_tu, "TOY")


def test_non_integer_token_reports_line(toy_tu):
    (toy_tu / "TOY_graph_indicator.txt").write_text("1\n1\nx\n2\n2\n")
    with pytest.raises(TUFormatError, match=r"TOY_graph_indicator.txt:3"):
        load_tu_dataset(toy_tu, "TOY")


def test_mutag_matches_table(mutag_dir):
    ds = load_tu_dataset(mutag_dir, "MUTAG")
    counts = ds.node_counts()
    assert len(ds) == 188
    assert counts.max() == 28
    assert abs(counts.mean() - 17.93) <= 0.01
    assert ds.num_classes == 2 and ds.feature_dim == 7
    for g in ds.graphs:
        a = g.adjacency
        assert np.array_equal(a, a.T) and not np.any(np.diag(a))
        assert np.all(g.features.sum(axis=1) == 1)


def test_kfold_balanced_case():
    labels = [0, 1] * 5
    splits = stratified_kfold(labels, 5, seed=3)
    for _, test in splits:
        assert sorted(np.asarray(labels)[test].tolist()) == [0, 1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(4, 15), min_size=2, max_size=4), st.integers(2, 4),
       st.integers(0, 1000))
def test_kfold_partition_and_stratification(class_sizes, folds, seed):
    labels = np.repeat(np.arange(len(class_sizes)), class_sizes)
    np.random.default_rng(seed).shuffle(labels)
    splits = stratified_kfold(labels, folds, seed)
    tests = np.concatenate([te for _, te in splits])
    assert sorted(tests.tolist()) == list(range(len(labels)))
    for tr, te in splits:
        assert not set(tr) & set(te)
        assert len(tr) + len(te) == len(labels)
    for c in range(len(class_sizes)):
        per_fold = [int(np.sum(labels[te] == c)) for _, te in splits]
        assert max(per_fold) - min(per_fold) <= 1
    again = stratified_kfold(labels, folds, seed)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(splits, again))


def test_kfold_small_class_error_names_class():
    with pytest.raises(StratificationError, match="class 1"):
        stratified_kfold([0, 0, 0, 0, 1], 2, seed=0)
