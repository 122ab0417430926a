import numpy as np
import pytest

from protoclr.core import RngStream
from protoclr.data import EmbeddingSet, SyntheticSpec, generate
from protoclr.errors import ClassTooSmall, EmptySupport, ZeroNorm
from protoclr.fewshot import EvalConfig, evaluate, format_accuracy, random_baseline, sample_episode, simpleshot_classify


def clustered(classes=5, per=12, sep=10.0, noise=0.1, seed=0):
    return generate(SyntheticSpec(num_classes=classes, dim=8, samples_per=per, class_separation=sep, noise_sigma=noise, seed=seed))


class TestEpisode:
    def test_two_by_two(self):
        es = EmbeddingSet(np.eye(4), [0, 0, 1, 1])
        ep = sample_episode(es, 1, RngStream(0))
        assert {c: len(v) for c, v in ep.support.items()} == {0: 1, 1: 1}
        assert len(ep.query) == 2
        assert sorted(es.labels[ep.query].tolist()) == [0, 1]

    def test_too_small(self):
        es = EmbeddingSet(np.eye(4), [0, 0, 1, 1])
        with pytest.raises(ClassTooSmall) as exc:
            sample_episode(es, 2, RngStream(0))
        assert exc.value.class_id == 0

    def test_deterministic(self):
        es = clustered()
        a = sample_episode(es, 5, RngStream(3))
        b = sample_episode(es, 5, RngStream(3))
        assert all(np.array_equal(a.support[c], b.support[c]) for c in a.support)
        np.testing.assert_array_equal(a.query, b.query)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_partition(self, k):
        es = clustered()
        ep = sample_episode(es, k, RngStream(k))
        s = ep.support_indices()
        assert len(s) == k * 5
        assert len(np.intersect1d(s, ep.query)) == 0
        assert sorted(np.concatenate([s, ep.query]).tolist()) == list(range(es.n))
        for c, idx in ep.support.items():
            assert np.all(es.labels[idx] == c)

    def test_uniform_selection(self):
        es = EmbeddingSet(np.zeros((4, 1)) + 1, [0, 0, 0, 0])
        hits = np.zeros(4)
        for r in range(4000):
            hits[sample_episode(es, 1, RngStream(r)).support[0]] += 1
        assert np.all(np.abs(hits / 4000 - 0.25) < 0.03)


class TestSimpleShot:
    def test_query_equals_support(self):
        sup = np.array([[5.0, 0.0], [-5.0, 1.0]])
        assert simpleshot_classify(sup, [3, 7], [[5.0, 0.0]]).tolist() == [3]

    def test_hand_computed(self):
        # mu = (1,1); shifted query (1,-0.5) is nearer to A's (0.707,-0.707)
        pred = simpleshot_classify([[2, 0], [0, 2]], [0, 1], [[2, 0.5]])
        assert pred.tolist() == [0]
        q = np.array([1, -0.5]) / np.linalg.norm([1, -0.5])
        pa = np.array([1, -1]) / np.sqrt(2)
        assert np.linalg.norm(q - pa) < np.linalg.norm(q + pa)

    def test_euclid_matches_cosine_ranking(self, rng):
        sup = rng.normal((12, 6))
        labels = np.arange(12) % 4
        qs = rng.normal((30, 6))
        pred = simpleshot_classify(sup, labels, qs)
        mu = sup.mean(axis=0)
        cents = np.stack([sup[labels == c].mean(axis=0) for c in range(4)]) - mu
        cents /= np.linalg.norm(cents, axis=1, keepdims=True)
        qn = (qs - mu) / np.linalg.norm(qs - mu, axis=1, keepdims=True)
        np.testing.assert_array_equal(pred, np.argmax(qn @ cents.T, axis=1))

    def test_translation_and_scale_invariant(self, rng):
        sup = rng.normal((10, 4))
        labels = np.arange(10) % 5
        qs = rng.normal((40, 4))
        base = simpleshot_classify(sup, labels, qs)
        shift = np.array([3.0, -7.0, 0.5, 2.0])
        np.testing.assert_array_equal(simpleshot_classify(sup + shift, labels, qs + shift), base)
        np.testing.assert_array_equal(simpleshot_classify(4.0 * sup, labels, 4.0 * qs), base)

    def test_tie_breaks_to_smallest_class(self):
        sup = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert simpleshot_classify(sup, [9, 4], [[0.0, 1.0]]).tolist() == [4]

    def test_errors(self):
        with pytest.raises(EmptySupport):
            simpleshot_classify(np.zeros((0, 2)), [], [[1.0, 0.0]])
        with pytest.raises(ZeroNorm):
            simpleshot_classify([[1.0, 1.0]], [0], [[2.0, 2.0]])


class TestEvaluate:
    def test_separated_is_perfect(self):
        rep = evaluate(clustered(), EvalConfig(k=1, num_runs=5, seed=1))
        assert rep.accuracies == [100.0] * 5
        assert rep.std == 0.0

    def test_shuffled_labels_are_chance(self):
        rng = RngStream(17)
        classes, per = 10, 40
        es = EmbeddingSet(rng.normal((classes * per, 16)), np.repeat(np.arange(classes), per))
        rep = evaluate(es, EvalConfig(k=1, num_runs=10, seed=2))
        p = 1 / classes
        se = 100 * np.sqrt(p * (1 - p) / (rep.num_queries * 10))
        assert abs(rep.mean - 100 * p) <= 3 * se

    def test_deterministic(self):
        es = clustered(noise=3.0)
        a = evaluate(es, EvalConfig(k=5, num_runs=4, seed=9))
        b = evaluate(es, EvalConfig(k=5, num_runs=4, seed=9))
        assert a == b

    def test_summary_consistent(self):
        rep = evaluate(clustered(noise=4.0), EvalConfig(k=1, num_runs=6, seed=0))
        assert rep.mean == pytest.approx(np.mean(rep.accuracies), abs=1e-9)
        assert rep.std == pytest.approx(np.std(rep.accuracies, ddof=1), abs=1e-9)
        assert all(0 <= a <= 100 for a in rep.accuracies)
        assert set(rep.support_sizes.values()) == {1}

    def test_propagates_class_too_small(self):
        with pytest.raises(ClassTooSmall):
            evaluate(clustered(per=5), EvalConfig(k=5))


class TestRandomBaseline:
    @pytest.mark.parametrize(
        "classes,reported",
        [(132, 0.75), (89, 1.12), (27, 3.70), (19, 5.26), (96, 1.04), (56, 1.78)],
    )
    def test_table_values(self, classes, reported):
        # the reported column is truncated rather than rounded in two places
        assert random_baseline(classes) == pytest.approx(reported, abs=0.01)

    def test_one_class(self):
        assert random_baseline(1) == 100.0


def test_format():
    assert format_accuracy(35.31, 2.34) == "35.3±2.3"
    assert format_accuracy(7.414, 1.04) == "7.41±1.0"
