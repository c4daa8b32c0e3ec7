from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cuprank.clustering import ClusterModel
from cuprank.core import ContextSchema
from cuprank.profiles import (ArtifactError, Cup, CupSet, ProfileError, assign, assign_many,
                              compute_weights, describe_cups, dumps_artifact, format_cups,
                              load_artifact, loads_artifact, project_to_context, prune_cups,
                              review_cups, save_artifact)

count_matrices = arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                        elements=st.integers(0, 40))


def cupset(*centers, dim):
    return CupSet(tuple(Cup(i, c, i) for i, c in enumerate(centers)), dim=dim)


class TestWeights:
    def test_exclusive_coordinate(self):
        w = compute_weights([[10], [0]])
        assert w[0] == {0: Fraction(1)} and w[1] == {}

    def test_count_ratio(self):
        w = compute_weights([[5], [10]])
        assert w[0][0] == Fraction(1, 3) and w[1][0] == Fraction(2, 3)

    def test_unobserved_absent(self):
        w = compute_weights([[0, 1], [0, 1]])
        assert all(0 not in row for row in w.values())

    def test_projection_counts(self):
        schema = ContextSchema((("Device Type", ("Mobile", "Desktop")),))
        vectors = np.array([[1, 1, 0], [0, 1, 0], [1, 1, 0], [1, 0, 1]])
        model = ClusterModel(2, np.zeros((2, 3)), np.array([0, 0, 0, 1]), 0.0, 0, 1)
        counts = project_to_context(model, vectors, schema)
        np.testing.assert_array_equal(counts, [[3, 0], [0, 1]])

    @settings(max_examples=200)
    @given(count_matrices)
    def test_columns_sum_to_one_exactly(self, counts):
        w = compute_weights(counts)
        for j in range(counts.shape[1]):
            col = sum((w[i].get(j, Fraction(0)) for i in w), Fraction(0))
            assert col == (1 if counts[:, j].sum() else 0)


class TestPruning:
    def test_strict_boundary(self):
        # 19 of 100 -> 0.19 dropped, 20 of 100 -> 0.20 kept
        w = compute_weights([[19, 20, 50], [81, 80, 50]])
        cups = prune_cups(w, threshold=0.2)
        assert set(cups.cups[0].weights) == {1, 2}
        assert cups.cups[0].weights[1] == pytest.approx(0.2)

    def test_emptied_cluster_dropped(self):
        w = compute_weights([[1, 1], [9, 9], [10, 0]])
        cups = prune_cups(w, threshold=0.2)
        assert [c.source_cluster for c in cups.cups] == [1, 2]
        assert cups.cup_ids == [0, 1]
        assert cups.by_cluster() == {1: 0, 2: 1}

    def test_degenerate_pruning(self):
        with pytest.raises(ProfileError, match="degenerate"):
            prune_cups(compute_weights([[1], [1], [1], [1], [1], [1]]), threshold=0.2)

    def test_seventeen_of_twenty(self):
        counts = np.zeros((20, 20), dtype=int)
        np.fill_diagonal(counts, 10)
        counts[17:, :] = 0
        counts[17:, 0] = 1
        cups = prune_cups(compute_weights(counts), threshold=0.2)
        assert len(cups) == 17

    @settings(max_examples=200)
    @given(count_matrices, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_threshold(self, counts, t1, t2):
        lo, hi = sorted((round(t1, 3), round(t2, 3)))
        w = compute_weights(counts)
        try:
            strict = prune_cups(w, hi)
        except ProfileError:
            return
        loose = prune_cups(w, lo)
        kept_loose = {(c.source_cluster, j) for c in loose.cups for j in c.weights}
        kept_strict = {(c.source_cluster, j) for c in strict.cups for j in c.weights}
        assert kept_strict <= kept_loose

    @settings(max_examples=200)
    @given(count_matrices, st.floats(0.01, 1))
    def test_kept_iff_at_least_threshold(self, counts, t):
        t = round(t, 2)
        w = compute_weights(counts)
        try:
            cups = prune_cups(w, t)
        except ProfileError:
            assert all(v < Fraction(str(t)) for row in w.values() for v in row.values())
            return
        by_cluster = {c.source_cluster: c for c in cups.cups}
        for i, row in w.items():
            kept = {j for j, v in row.items() if v >= Fraction(str(t))}
            if kept:
                assert set(by_cluster[i].weights) == kept
            else:
                assert i not in by_cluster


class TestAssignment:
    def test_example_distances(self):
        cups = cupset({0: 1.0}, {1: 0.5, 2: 0.5}, dim=3)
        assert assign(np.array([0, 1, 1]), cups) == 1

    def test_exact_center(self):
        cups = cupset({0: 1.0}, {1: 1.0}, dim=2)
        assert assign(np.array([0, 1]), cups) == 1

    def test_tie_lowest_id(self):
        cups = cupset({0: 1.0}, {1: 1.0}, dim=2)
        assert assign(np.array([0, 0]), cups) == 0
        assert assign(np.array([1, 1]), cups) == 0

    def test_errors(self):
        with pytest.raises(ProfileError):
            assign(np.array([0, 1, 0]), cupset({0: 1.0}, dim=2))
        with pytest.raises(ProfileError):
            assign(np.array([0]), CupSet((), dim=1))

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_many_matches_single(self, seed):
        rng = np.random.default_rng(seed)
        centers = [{j: float(rng.choice([0.25, 0.5, 1.0])) for j in
                    rng.choice(6, size=rng.integers(1, 4), replace=False)} for _ in range(4)]
        cups = cupset(*centers, dim=6)
        X = rng.integers(0, 2, (20, 6))
        np.testing.assert_array_equal(assign_many(X, cups), [assign(x, cups) for x in X])

    def test_orphan_reviews_go_to_nearest(self):
        schema = ContextSchema((("F", ("a", "b")),))
        vectors = np.array([[1, 0], [0, 1], [1, 0]])
        model = ClusterModel(3, np.zeros((3, 2)), np.array([0, 1, 2]), 0.0, 0, 1)
        cups = CupSet((Cup(0, {0: 1.0}, 0), Cup(1, {1: 1.0}, 1)), dim=2)
        np.testing.assert_array_equal(review_cups(model, cups, vectors, schema), [0, 1, 0])


class TestArtifact:
    def test_roundtrip(self, small_training, tmp_path):
        art = small_training.artifact
        path = save_artifact(art, tmp_path / "m.cup")
        back = load_artifact(path)
        assert back.cups == art.cups
        assert back.rankers == art.rankers
        assert back.schema == art.schema and back.vocab == art.vocab
        assert dumps_artifact(back) == path.read_bytes()

    def test_version_bump_rejected(self, small_training):
        data = dumps_artifact(small_training.artifact)
        bumped = data.replace(b'"version":1', b'"version":2', 1)
        with pytest.raises(ArtifactError, match="version"):
            loads_artifact(bumped)

    def test_truncation_rejected(self, small_training):
        data = dumps_artifact(small_training.artifact)
        for cut in (10, len(data) // 2, len(data) - 5):
            with pytest.raises(ArtifactError):
                loads_artifact(data[:cut])

    def test_checksum_rejected(self, small_training):
        data = bytearray(dumps_artifact(small_training.artifact))
        i = data.index(b'"alpha":1.0') + 8
        data[i] = ord("2")
        with pytest.raises(ArtifactError, match="checksum"):
            loads_artifact(bytes(data))

    def test_not_an_artifact(self):
        with pytest.raises(ArtifactError):
            loads_artifact(b'{"format": "zip"}\n{}\n')

    def test_failed_save_keeps_old_file(self, small_training, tmp_path, monkeypatch):
        path = save_artifact(small_training.artifact, tmp_path / "m.cup")
        before = path.read_bytes()

        def boom(*a, **k):
            raise OSError("disk full")
        monkeypatch.setattr("cuprank.profiles.os.replace", boom)
        with pytest.raises(OSError):
            save_artifact(small_training.artifact, path)
        assert path.read_bytes() == before
        assert list(tmp_path.iterdir()) == [path]

    def test_describe_and_format(self, small_training):
        profiles = describe_cups(small_training.artifact)
        assert [p["cup_id"] for p in profiles] == small_training.artifact.cups.cup_ids
        for p in profiles:
            weights = [c["weight"] for c in p["categories"]]
            assert weights == sorted(weights, reverse=True)
            assert min(weights) >= 0.2 - 1e-4
        text = format_cups(profiles)
        assert text.splitlines()[0].startswith("CUP 0")
