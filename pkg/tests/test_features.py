import numpy as np
import pytest

from incongruity.features import (
    FEATURE_NAMES,
    FeatureError,
    IdfTable,
    article_features,
    build_idf,
    extract_features,
    linear_ip_score,
    linear_loss,
    predict_linear,
    train_linear,
    write_features_csv,
)
from incongruity.textcorpus import Article


def _flat_idf():
    return IdfTable(idf={}, n_docs=0)


class TestExtractFeatures:
    def test_identical_texts_have_unit_cosines(self):
        f = extract_features([2, 3, 4], [[2, 3, 4]], _flat_idf())
        assert f[0] == pytest.approx(1.0)
        assert f[1] == pytest.approx(1.0)
        assert f[7] == 0.0  # nothing missing

    def test_disjoint_vocabularies(self):
        f = extract_features([2, 3], [[4, 5], [6]], _flat_idf())
        assert f[0] == 0.0
        assert f[1] == 0.0
        assert f[2] == 0.0
        assert f[7] == 2.0  # missing count equals headline length

    def test_tf_cosine_hand_computed(self):
        # headline {a,b}, body {a,c}: dot 1, norms sqrt(2) each
        f = extract_features([2, 3], [[2, 4]], _flat_idf())
        assert f[0] == pytest.approx(0.5)

    def test_lengths_and_counts(self):
        f = extract_features([2, 3, 4], [[2, 2], [3, 3, 3]], _flat_idf())
        assert f[4] == 3.0
        assert f[5] == 5.0
        assert f[6] == 2.0

    def test_bigram_overlap(self):
        f = extract_features([2, 3, 4], [[9, 2, 3, 9]], _flat_idf())
        # bigram (2,3) present, (3,4) absent; normalized by headline length
        assert f[3] == pytest.approx(1 / 3)

    def test_permutation_invariance_over_paragraphs(self):
        idf = _flat_idf()
        a = extract_features([2, 3], [[4, 5], [6, 7]], idf)
        b = extract_features([2, 3], [[6, 7], [4, 5]], idf)
        np.testing.assert_array_equal(a, b)

    def test_cosines_invariant_under_body_duplication(self):
        idf = IdfTable(idf={2: 1.5, 3: 2.0, 4: 1.1}, n_docs=10)
        once = extract_features([2, 3], [[2, 4]], idf)
        twice = extract_features([2, 3], [[2, 4], [2, 4]], idf)
        assert once[0] == pytest.approx(twice[0])
        assert once[1] == pytest.approx(twice[1])

    def test_empty_inputs_rejected(self):
        with pytest.raises(FeatureError):
            extract_features([], [[2]], _flat_idf())
        with pytest.raises(FeatureError):
            extract_features([2], [], _flat_idf())

    def test_all_features_finite_and_fixed_width(self):
        rng = np.random.default_rng(0)
        idf = _flat_idf()
        for _ in range(100):
            headline = rng.integers(2, 30, size=rng.integers(1, 10)).tolist()
            paragraphs = [
                rng.integers(2, 30, size=rng.integers(1, 20)).tolist()
                for _ in range(rng.integers(1, 5))
            ]
            f = extract_features(headline, paragraphs, idf)
            assert f.shape == (len(FEATURE_NAMES),)
            assert np.all(np.isfinite(f))
            assert 0.0 <= f[0] <= 1.0
            assert 0.0 <= f[1] <= 1.0


class TestBuildIdf:
    def test_rarer_tokens_get_higher_idf(self):
        arts = [
            Article(id=f"a{i}", category="c", headline=[2], paragraphs=[[2, 3]])
            for i in range(9)
        ]
        arts.append(Article(id="a9", category="c", headline=[4], paragraphs=[[4]]))
        idf = build_idf(arts)
        assert idf.get(4) > idf.get(2)
        assert idf.get(999) >= idf.get(4)  # unseen is rarest


class TestTrainLinear:
    def test_separable_reaches_full_accuracy(self):
        rng = np.random.default_rng(1)
        n = 100
        x = np.vstack(
            [
                rng.normal(loc=(-2, -2), scale=0.3, size=(n // 2, 2)),
                rng.normal(loc=(2, 2), scale=0.3, size=(n // 2, 2)),
            ]
        )
        y = np.array([0] * (n // 2) + [1] * (n // 2))
        w = train_linear(x, y, epochs=500, lr=0.5)
        preds = (predict_linear(w, x) >= 0.5).astype(int)
        assert (preds == y).mean() == 1.0

    def test_all_zero_features_bias_only_prior(self):
        x = np.zeros((100, 3))
        y = np.array([1] * 30 + [0] * 70)
        w = train_linear(x, y, epochs=2000, lr=0.5)
        np.testing.assert_array_equal(w[:-1], np.zeros(3))
        assert predict_linear(w, np.zeros((1, 3)))[0] == pytest.approx(0.3, abs=0.01)

    def test_loss_decreases_monotonically(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(500, 4))
        y = (x @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.3 > 0).astype(int)
        losses = [
            linear_loss(train_linear(x, y, epochs=k, lr=0.2), x, y)
            for k in range(1, 11)
        ]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(FeatureError):
            train_linear(np.ones((5, 2)), [1, 1, 1, 1, 1])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(50, 3))
        y = (x[:, 0] > 0).astype(int)
        np.testing.assert_array_equal(
            train_linear(x, y, epochs=50, lr=0.1), train_linear(x, y, epochs=50, lr=0.1)
        )


class TestLinearIp:
    def test_max_aggregation_matches_per_paragraph_oracle(self):
        rng = np.random.default_rng(4)
        idf = _flat_idf()
        x = rng.normal(size=(40, len(FEATURE_NAMES)))
        y = rng.integers(0, 2, size=40)
        y[:2] = [0, 1]
        w = train_linear(x, y, epochs=20, lr=0.1)
        headline = [2, 3, 4]
        paragraphs = [
            rng.integers(2, 30, size=rng.integers(3, 12)).tolist() for _ in range(5)
        ]
        score, per = linear_ip_score(w, headline, paragraphs, idf)
        oracle = [
            float(predict_linear(w, extract_features(headline, [p], idf))[0])
            for p in paragraphs
        ]
        assert per == oracle
        assert score == max(oracle)


class TestFeaturesCsv:
    def test_header_and_rows(self, tmp_path):
        idf = _flat_idf()
        arts = [
            Article(id="a0", category="c", headline=[2, 3], paragraphs=[[2, 4]], label=1),
            Article(id="a1", category="c", headline=[5], paragraphs=[[5, 5]], label=0),
        ]
        rows = [article_features(a, idf) for a in arts]
        path = tmp_path / "features.csv"
        assert write_features_csv(path, rows, labels=[a.label for a in arts]) == 2
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(FEATURE_NAMES) + ",label"
        assert len(lines) == 3
        assert lines[1].endswith(",1")
