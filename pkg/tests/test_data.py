import numpy as np
import pytest

from pscgl.data import (
    Dataset,
    Graph,
    build_task_sequence,
    canonical_edges,
    exact_fraction,
    filter_small_classes,
    load_tudataset,
    save_tudataset,
)
from pscgl.errors import (
    ContractViolation,
    FormatError,
    IngestionError,
    SplitError,
    UnusableDatasetError,
    ValidationError,
)
from pscgl.synth import make_corpus


def write(path, text):
    path.write_text(text, encoding="utf-8")


def make_tiny_dir(tmp_path, with_attributes=True):
    """One 3-node graph: edges listed (1,2),(2,1),(2,3)."""
    d = tmp_path / "tiny"
    d.mkdir()
    write(d / "TINY_A.txt", "1, 2\n2, 1\n2, 3\n")
    write(d / "TINY_graph_indicator.txt", "1\n1\n1\n")
    write(d / "TINY_graph_labels.txt", "5\n")
    if with_attributes:
        write(d / "TINY_node_attributes.txt", "0.5, 1.0\n-1.25, 2.0\n3.0, 0.0\n")
    else:
        write(d / "TINY_node_labels.txt", "1\n2\n1\n")
    return d


class TestGraph:
    def test_invariants(self):
        g = Graph(3, frozenset({(0, 1), (1, 2)}), np.zeros((3, 2)), 0)
        assert g.feature_dim == 2

    def test_rejects_self_loop(self):
        with pytest.raises(ValidationError):
            Graph(3, frozenset({(1, 1)}), np.zeros((3, 2)), 0)

    def test_rejects_out_of_range_edge(self):
        with pytest.raises(ValidationError):
            Graph(3, frozenset({(0, 3)}), np.zeros((3, 2)), 0)

    def test_rejects_feature_row_mismatch(self):
        with pytest.raises(ValidationError):
            Graph(3, frozenset(), np.zeros((2, 2)), 0)

    def test_canonical_edges_dedupes_both_directions(self):
        assert canonical_edges([(1, 0), (0, 1), (2, 2), (1, 2)]) == frozenset({(0, 1), (1, 2)})


class TestLoad:
    def test_symmetric_edge_listing_dedupes(self, tmp_path):
        ds = load_tudataset(str(make_tiny_dir(tmp_path)), "continuous")
        assert len(ds.graphs) == 1
        g = ds.graphs[0]
        assert g.node_count == 3
        assert g.edges == frozenset({(0, 1), (1, 2)})
        assert g.label == 0  # remapped from original label 5
        assert np.allclose(g.features[1], [-1.25, 2.0])

    def test_one_hot_node_labels(self, tmp_path):
        ds = load_tudataset(str(make_tiny_dir(tmp_path, with_attributes=False)), "binary")
        assert ds.feature_dim == 2
        assert np.array_equal(ds.graphs[0].features, [[1, 0], [0, 1], [1, 0]])

    def test_missing_file_names_it(self, tmp_path):
        d = make_tiny_dir(tmp_path)
        (d / "TINY_graph_labels.txt").unlink()
        with pytest.raises(IngestionError, match="graph_labels"):
            load_tudataset(str(d), "continuous")

    def test_edge_to_unknown_node_reports_line(self, tmp_path):
        d = make_tiny_dir(tmp_path)
        write(d / "TINY_A.txt", "1, 2\n2, 9\n")
        with pytest.raises(FormatError, match=r"A\.txt:2"):
            load_tudataset(str(d), "continuous")

    def test_binary_kind_rejects_non_binary_attributes(self, tmp_path):
        d = make_tiny_dir(tmp_path)
        (d / "TINY_node_labels.txt").unlink(missing_ok=True)
        with pytest.raises(ValidationError, match="non-binary"):
            load_tudataset(str(d), "binary")

    def test_enzymes_scale_corpus_loads(self, tmp_path):
        ds = make_corpus(seed=3)
        save_tudataset(ds, str(tmp_path / "e"), "SYN6")
        back = load_tudataset(str(tmp_path / "e"), "continuous")
        assert len(back.graphs) == 600
        assert back.class_count == 6

    def test_round_trip_identical(self, tmp_path):
        for kind, name in [("continuous", "c"), ("binary", "b")]:
            ds = make_corpus(kind=kind, n_classes=3, per_class=5, feature_dim=4, seed=11)
            save_tudataset(ds, str(tmp_path / name), "RT")
            back = load_tudataset(str(tmp_path / name), kind)
            assert back.class_count == ds.class_count
            assert len(back.graphs) == len(ds.graphs)
            for a, b in zip(ds.graphs, back.graphs):
                assert a == b


class TestFilter:
    def _dataset(self, counts):
        per_class = list(counts)
        return make_corpus(n_classes=len(per_class), per_class=per_class, feature_dim=4, seed=2)

    def test_drops_small_classes(self):
        ds = self._dataset([10, 4, 7])
        out = filter_small_classes(ds, 5)
        assert out.class_count == 2
        assert len(out.graphs) == 17
        assert sorted({g.label for g in out.graphs}) == [0, 1]

    def test_noop_when_all_pass(self):
        ds = self._dataset([6, 6, 6])
        assert filter_small_classes(ds, 5) is ds

    def test_unusable_when_fewer_than_two_survive(self):
        ds = self._dataset([10, 4, 4])
        with pytest.raises(UnusableDatasetError):
            filter_small_classes(ds, 5)

    def test_order_preserved(self):
        ds = self._dataset([5, 3, 5])
        out = filter_small_classes(ds, 5)
        kept = [g for g in ds.graphs if g.label != 1]
        assert [g.node_count for g in out.graphs] == [g.node_count for g in kept]

    def test_aromaticity_scale_filtering(self):
        # 40 classes, 3945 graphs; 6 classes below the threshold
        small = [2, 3, 4, 4, 3, 2]
        big = [116] * 33 + [99]
        ds = self._dataset(big + small)
        assert len(ds.graphs) == 3945
        assert ds.class_count == 40
        out = filter_small_classes(ds, 5)
        assert out.class_count == 34
        counts = out.class_counts()
        assert all(6 <= c <= 150 for c in counts.values())


class TestTaskSequence:
    def test_six_classes_three_tasks(self):
        ds = make_corpus(n_classes=6, per_class=10, feature_dim=4, seed=5)
        seq = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=1)
        assert [sorted(t.class_labels) for t in seq.tasks] == [[0, 1], [2, 3], [4, 5]]

    def test_34_classes_17_tasks(self):
        ds = make_corpus(n_classes=34, per_class=6, feature_dim=4, seed=5)
        seq = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=1)
        assert len(seq.tasks) == 17

    def test_exact_fraction_split(self):
        ds = make_corpus(n_classes=2, per_class=10, feature_dim=4, seed=5)
        seq = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=1)
        task = seq.tasks[0]
        per_class = {c: [0, 0, 0] for c in range(2)}
        for part, part_idx in ((task.train_idx, 0), (task.val_idx, 1), (task.test_idx, 2)):
            for i in part:
                per_class[ds.graphs[i].label][part_idx] += 1
        assert per_class == {0: [8, 1, 1], 1: [8, 1, 1]}

    def test_trailing_classes_dropped(self):
        ds = make_corpus(n_classes=5, per_class=8, feature_dim=4, seed=5)
        seq = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=1)
        assert len(seq.tasks) == 2
        assert seq.dropped_classes == (4,)

    def test_partition_property(self):
        ds = make_corpus(n_classes=4, per_class=[9, 13, 7, 20], feature_dim=4, seed=6)
        seq = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=3)
        all_idx = [i for t in seq.tasks for i in t.all_idx]
        assert sorted(all_idx) == list(range(len(ds.graphs)))
        for t in seq.tasks:
            for i in t.all_idx:
                assert ds.graphs[i].label in t.class_labels

    def test_deterministic(self):
        ds = make_corpus(n_classes=4, per_class=10, feature_dim=4, seed=6)
        a = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=9)
        b = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=9)
        c = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=10)
        assert a == b
        assert a != c

    def test_min_one_graph_per_split(self):
        ds = make_corpus(n_classes=2, per_class=3, feature_dim=4, seed=6)
        seq = build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=1)
        t = seq.tasks[0]
        assert len(t.train_idx) == 2 and len(t.val_idx) == 2 and len(t.test_idx) == 2

    def test_too_small_class_raises(self):
        ds = make_corpus(n_classes=2, per_class=[5, 2], feature_dim=4, seed=6)
        with pytest.raises(SplitError, match="class 1"):
            build_task_sequence(ds, 2, (0.8, 0.1, 0.1), seed=1)

    def test_fractions_must_sum_to_one(self):
        ds = make_corpus(n_classes=2, per_class=10, feature_dim=4, seed=6)
        with pytest.raises(ContractViolation):
            build_task_sequence(ds, 2, (0.8, 0.1, 0.2), seed=1)


def test_exact_fraction_snaps_decimals():
    assert exact_fraction(0.3) * 10 == 3
    assert exact_fraction(0.1) * 10 == 1
    assert exact_fraction(0.7) * 30 == 21
