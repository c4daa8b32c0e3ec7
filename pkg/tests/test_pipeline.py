import numpy as np
import pytest

from cuprank.core import ContextualReview
from cuprank.pipeline import TrainConfig, parse_k_range, train_pipeline
from cuprank.profiles import assign_many, context_block
from cuprank.core import encode_matrix


class TestConfig:
    @pytest.mark.parametrize("value,expected", [("2..30", (2, 30)), ("4", (4, 4)),
                                                (4, (4, 4)), ([3, 5], (3, 5))])
    def test_k_range(self, value, expected):
        assert parse_k_range(value) == expected

    @pytest.mark.parametrize("value", ["0..3", "5..2", "x"])
    def test_bad_k_range(self, value):
        with pytest.raises(ValueError):
            parse_k_range(value)

    def test_from_dict(self):
        cfg = TrainConfig.from_dict({"k_range": "3..7", "alpha": 0.5})
        assert (cfg.k_min, cfg.k_max, cfg.alpha) == (3, 7, 0.5)
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"k": 3})


class TestPipeline:
    def test_summary(self, small_training):
        art = small_training.artifact
        s = art.summary
        assert s["chosen_k"] == small_training.silhouette.chosen_k
        assert s["cups"] == len(art.cups)
        assert s["dropped_clusters"] == s["chosen_k"] - s["cups"]
        assert set(art.rankers.per_cup) <= set(art.cups.cup_ids)

    def test_review_cups_are_nearest_or_own(self, small_training, small_corpus,
                                            default_schema, default_vocab):
        reviews, _ = small_corpus
        X = encode_matrix(reviews, default_schema, default_vocab)
        cups = small_training.artifact.cups
        own = np.array([cups.by_cluster().get(int(c), -1)
                        for c in small_training.clusters.assignment])
        nearest = assign_many(context_block(X, default_schema), cups)
        got = small_training.review_cups
        np.testing.assert_array_equal(got[own >= 0], own[own >= 0])
        np.testing.assert_array_equal(got[own < 0], nearest[own < 0])

    def test_persona_recovery(self, small_training, small_corpus):
        # with disjoint context signatures, CUPs should line up with personas
        _, truth = small_corpus
        personas = np.array(truth.review_persona)
        cups = small_training.review_cups
        purity = sum(np.bincount(personas[cups == c]).max() for c in np.unique(cups))
        assert purity / len(cups) > 0.9

    def test_infeasible_range(self, default_schema, default_vocab):
        reviews = [ContextualReview("a", {"Beach"}, {})] * 5
        with pytest.raises(ValueError):
            train_pipeline(reviews, default_schema, default_vocab, TrainConfig(k_min=2, k_max=3))
        with pytest.raises(ValueError):
            train_pipeline([], default_schema, default_vocab)


@pytest.mark.slow
def test_flat_corpus_profile_rankers_track_global():
    import itertools
    from dataclasses import replace

    from cuprank.eval.scenario import builtin_scenario, load_scenario
    from cuprank.eval.synthetic import generate
    from cuprank.ranker import rank

    sc = load_scenario(builtin_scenario("cocos_flat"))
    workload = replace(sc.workload, destinations=20, seed=0)
    reviews, _ = generate(workload, sc.schema, sc.vocab)
    suite = train_pipeline(reviews, sc.schema, sc.vocab,
                           replace(sc.train, k_min=2, k_max=6, seed=0)).artifact.rankers
    ends = sc.vocab.endorsements
    queries = [()] + [(e,) for e in ends] + list(itertools.combinations(ends, 2))
    overlaps = [len(set(rank(m, q).destinations) & set(rank(suite.global_model, q).destinations))
                / 10 for m in suite.per_cup.values() for q in queries]
    assert len(suite.per_cup) >= 2
    assert np.mean(overlaps) >= 0.95
