import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from rogpl.graph import (
    DatasetError,
    Graph,
    SplitSpec,
    build_adjacency,
    load_dataset,
    normalize_adjacency,
    save_dataset,
    split_nodes,
    spmm,
)

from conftest import CORA_DIR, make_graph


def write_dataset(tmp_path, n_nodes, n_features, n_classes, node_rows, edge_rows):
    (tmp_path / "meta.json").write_text(
        f'{{"n_nodes": {n_nodes}, "n_features": {n_features}, "n_classes": {n_classes}}}')
    header = "node_id\tlabel\t" + "\t".join(f"f{i+1}" for i in range(n_features))
    (tmp_path / "nodes.tsv").write_text("\n".join([header] + node_rows) + "\n")
    (tmp_path / "edges.tsv").write_text("\n".join(edge_rows) + ("\n" if edge_rows else ""))
    return str(tmp_path)


class TestLoadDataset:
    def test_single_edge_symmetrized(self, tmp_path):
        path = write_dataset(tmp_path, 2, 1, 2,
                             ["0\t0\t1.0", "1\t1\t2.0"], ["0\t1"])
        g = load_dataset(path)
        assert g.adjacency.nnz == 2
        assert g.adjacency[0, 1] == 1.0 and g.adjacency[1, 0] == 1.0

    def test_cora_dimensions(self, cora):
        assert cora.n_nodes == 2708
        assert cora.n_known_classes == 7
        assert cora.n_features == 1433
        assert cora.adjacency.nnz // 2 == 5278

    def test_dangling_endpoint_rejected(self, tmp_path):
        path = write_dataset(tmp_path, 3, 1, 2,
                             ["0\t0\t1.0", "1\t1\t2.0", "2\t0\t0.5"], ["0\t99"])
        with pytest.raises(DatasetError, match="99"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="missing"):
            load_dataset(str(tmp_path))

    def test_label_out_of_range(self, tmp_path):
        path = write_dataset(tmp_path, 1, 1, 2, ["0\t5\t1.0"], [])
        with pytest.raises(DatasetError, match="label 5"):
            load_dataset(path)

    def test_non_numeric_feature(self, tmp_path):
        path = write_dataset(tmp_path, 1, 1, 2, ["0\t0\tabc"], [])
        with pytest.raises(DatasetError):
            load_dataset(path)

    def test_asymmetric_input_union(self, tmp_path):
        path = write_dataset(tmp_path, 3, 1, 2,
                             ["0\t0\t1.0", "1\t1\t2.0", "2\t0\t0.5"],
                             ["0\t1", "1\t0", "1\t2"])
        g = load_dataset(path)
        dense = g.adjacency.toarray()
        assert (dense == dense.T).all()
        assert dense[1, 2] == 1.0 and dense[2, 1] == 1.0

    def test_roundtrip_save_load(self, tmp_path):
        g = make_graph(4, [(0, 1), (1, 2), (2, 3)], [0, 1, 0, 1])
        out = tmp_path / "ds"
        save_dataset(g, str(out))
        g2 = load_dataset(str(out))
        assert g2.n_nodes == g.n_nodes
        np.testing.assert_array_equal(g2.labels, g.labels)
        np.testing.assert_allclose(g2.features, g.features)
        assert (g2.adjacency != g.adjacency).nnz == 0


class TestNormalizeAdjacency:
    def test_isolated_node(self):
        g = make_graph(1, np.zeros((0, 2)), [0])
        a_hat = normalize_adjacency(g)
        np.testing.assert_allclose(a_hat.toarray(), [[1.0]])

    def test_two_nodes_one_edge(self):
        g = make_graph(2, [(0, 1)], [0, 0])
        a_hat = normalize_adjacency(g)
        np.testing.assert_allclose(a_hat.toarray(), np.full((2, 2), 0.5))

    def test_triangle(self):
        g = make_graph(3, [(0, 1), (1, 2), (2, 0)], [0, 0, 0])
        a_hat = normalize_adjacency(g)
        np.testing.assert_allclose(a_hat.toarray(), np.full((3, 3), 1.0 / 3.0))

    def test_dense_oracle_random_graph(self):
        rng = np.random.default_rng(3)
        n = 12
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.random() < 0.3]
        g = make_graph(n, edges, [0] * n)
        a_hat = normalize_adjacency(g).toarray()
        a_tilde = g.adjacency.toarray() + np.eye(n)
        d = np.diag(1.0 / np.sqrt(a_tilde.sum(axis=1)))
        np.testing.assert_allclose(a_hat, d @ a_tilde @ d, atol=1e-14)

    @pytest.mark.parametrize("k", range(3, 11))
    def test_cycle_row_sums_are_one(self, k):
        edges = [(i, (i + 1) % k) for i in range(k)]
        g = make_graph(k, edges, [0] * k)
        a_hat = normalize_adjacency(g)
        row_sums = a_hat @ np.ones(k)
        np.testing.assert_allclose(row_sums, np.ones(k), atol=1e-12)

    def test_diagonal_present_and_positive(self):
        g = make_graph(5, [(0, 1), (2, 3)], [0] * 5)
        a_hat = normalize_adjacency(g)
        assert (a_hat.diagonal() > 0).all()
        assert (a_hat.data > 0).all()


class TestSpmm:
    def test_identity(self):
        x = np.arange(12.0).reshape(4, 3)
        assert (spmm(sp.identity(4, format="csr"), x) == x).all()

    def test_zero_annihilates(self):
        x = np.ones((4, 3))
        assert (spmm(sp.csr_matrix((4, 4)), x) == 0).all()

    def test_dense_oracle(self):
        rng = np.random.default_rng(5)
        m = sp.random(5, 5, density=0.4, random_state=7, format="csr")
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(spmm(m, x), m.toarray() @ x, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            spmm(sp.identity(3, format="csr"), np.ones((4, 2)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 64), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
    def test_matches_dense_oracle_property(self, n, k, seed):
        rng = np.random.default_rng(seed)
        m = sp.random(n, n, density=0.3, random_state=seed % (2 ** 31), format="csr")
        x = rng.normal(size=(n, k))
        np.testing.assert_allclose(spmm(m, x), m.toarray() @ x, atol=1e-12)


class TestSplitNodes:
    def test_single_class_fractions(self):
        g = make_graph(100, np.zeros((0, 2)), [0] * 100)
        train, val, test = split_nodes(g, SplitSpec(seed=7))
        assert (len(train), len(val), len(test)) == (70, 10, 20)

    def test_deterministic(self):
        g = make_graph(100, np.zeros((0, 2)), [0] * 100)
        a = split_nodes(g, SplitSpec(seed=7))
        b = split_nodes(g, SplitSpec(seed=7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_two_class_stratification(self):
        labels = [0] * 50 + [1] * 50
        g = make_graph(100, np.zeros((0, 2)), labels)
        train, val, test = split_nodes(g, SplitSpec(seed=1))
        for part, expected in ((train, 35), (val, 5), (test, 10)):
            counts = np.bincount(g.labels[part], minlength=2)
            assert (counts == expected).all()

    def test_partition_properties(self):
        rng = np.random.default_rng(11)
        labels = rng.integers(0, 3, size=60)
        labels[:9] = [0, 0, 0, 1, 1, 1, 2, 2, 2]  # every class big enough
        g = make_graph(60, np.zeros((0, 2)), labels)
        train, val, test = split_nodes(g, SplitSpec(seed=2))
        combined = np.concatenate([train, val, test])
        assert len(np.unique(combined)) == len(combined)  # disjoint
        np.testing.assert_array_equal(np.sort(combined), g.labeled_ids())

    def test_unlabeled_nodes_excluded(self):
        labels = [0] * 10 + [-1] * 5 + [1] * 10
        g = make_graph(25, np.zeros((0, 2)), labels, n_classes=2)
        train, val, test = split_nodes(g, SplitSpec(seed=0))
        combined = np.concatenate([train, val, test])
        assert (g.labels[combined] >= 0).all()
        assert len(combined) == 20

    def test_tiny_class_rejected(self):
        g = make_graph(5, np.zeros((0, 2)), [0, 0, 0, 1, 1])
        with pytest.raises(ValueError, match="cannot stratify"):
            split_nodes(g, SplitSpec(seed=0))

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec(train_fraction=0.5, val_fraction=0.1, test_fraction=0.1)


class TestGraphInvariants:
    def test_self_loops_rejected(self):
        adj = sp.csr_matrix(np.eye(2))
        with pytest.raises(ValueError, match="self-loops"):
            Graph(n_nodes=2, features=np.zeros((2, 1)), adjacency=adj,
                  labels=np.zeros(2, dtype=np.int64), n_known_classes=1)

    def test_asymmetric_rejected(self):
        adj = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValueError, match="symmetric"):
            Graph(n_nodes=2, features=np.zeros((2, 1)), adjacency=adj,
                  labels=np.zeros(2, dtype=np.int64), n_known_classes=1)

    def test_build_adjacency_drops_self_loops(self):
        a = build_adjacency(3, [(0, 0), (0, 1)])
        assert a.diagonal().sum() == 0
        assert a.nnz == 2
