import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fives.downstream import auc
from fives.estimators import CrossFeatureGenerator, FIVESClassifier, L1LogisticRegression
from fives.graph import CrossFeature
from fives.synthetic import make_xor


@pytest.fixture(scope="module")
def xor_split():
    t = make_xor(3000, noise=0.0, n_distractors=1, seed=3)
    return t.codes[:2400], t.labels[:2400], t.codes[2400:], t.labels[2400:]


@pytest.fixture(scope="module")
def fitted_fives(xor_split):
    X, y, _, _ = xor_split
    return FIVESClassifier(K=2, embed_dim=4, epochs=20, lr_theta=0.02, lr_arch=0.02, dropout=0.0,
                           batch_size=64, random_state=0).fit(X, y)


class TestParams:
    @pytest.mark.parametrize("cls", [FIVESClassifier, CrossFeatureGenerator, L1LogisticRegression])
    def test_clone_roundtrip(self, cls):
        est = cls()
        assert clone(est).get_params() == est.get_params()

    def test_set_params(self):
        est = FIVESClassifier().set_params(K=3, adjacency_mode="independent")
        assert est.get_params()["K"] == 3 and est.adjacency_mode == "independent"

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            FIVESClassifier().predict_proba(np.zeros((2, 2), dtype=int))
        with pytest.raises(NotFittedError):
            L1LogisticRegression().predict(np.zeros((2, 2), dtype=int))
        with pytest.raises(NotFittedError):
            CrossFeatureGenerator(crosses=[(0, 1)]).transform(np.zeros((2, 2), dtype=int))


class TestFIVESClassifier:
    def test_learns_xor(self, fitted_fives, xor_split):
        _, _, Xt, yt = xor_split
        proba = fitted_fives.predict_proba(Xt)
        assert proba.shape == (len(Xt), 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert auc(proba[:, 1], yt) > 0.95

    def test_predict_labels(self, fitted_fives, xor_split):
        _, _, Xt, _ = xor_split
        assert set(np.unique(fitted_fives.predict(Xt))) <= {0, 1}

    def test_crosses_and_adjacency(self, fitted_fives):
        A = fitted_fives.adjacency_
        assert A.shape == (2, 3, 3)
        members = {(c.anchor, *c.partners) for c in fitted_fives.crosses(0.5)}
        assert members & {(0, 1), (1, 0)}

    def test_string_labels(self, xor_split):
        X, y, Xt, _ = xor_split
        ys = np.where(y == 1, "yes", "no")
        clf = FIVESClassifier(epochs=1, embed_dim=2).fit(X[:300], ys[:300])
        assert set(clf.predict(Xt[:20])) <= {"yes", "no"}

    def test_explicit_validation(self, xor_split):
        X, y, Xt, yt = xor_split
        clf = FIVESClassifier(epochs=1, embed_dim=2).fit(X[:200], y[:200], X_val=Xt[:50], y_val=yt[:50])
        assert clf.n_features_in_ == 3

    def test_unseen_codes_rejected(self, fitted_fives):
        with pytest.raises(ValueError, match="not seen"):
            fitted_fives.predict_proba(np.array([[0, 5, 0]]))

    def test_feature_count_checked(self, fitted_fives):
        with pytest.raises(ValueError):
            fitted_fives.predict_proba(np.zeros((2, 2), dtype=int))

    @pytest.mark.parametrize(
        "X,y,match",
        [
            (np.zeros((4, 1), dtype=int), [0, 1, 0, 1], "feature"),
            (np.array([[0, -1], [1, 0]]), [0, 1], "non-negative"),
            (np.array([[0.5, 1], [1, 0]]), [0, 1], "integer"),
            (np.zeros((3, 2), dtype=int), [0, 1, 2], "binary"),
        ],
    )
    def test_input_validation(self, X, y, match):
        with pytest.raises(ValueError, match=match):
            FIVESClassifier(epochs=1).fit(X, y)

    def test_bad_val_fraction(self):
        with pytest.raises(ValueError, match="val_fraction"):
            FIVESClassifier(val_fraction=1.0).fit(np.zeros((4, 2), dtype=int), [0, 1, 0, 1])


class TestCrossFeatureGenerator:
    def test_explicit_crosses(self):
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
        out = CrossFeatureGenerator(crosses=[(0, 1)]).fit(X).transform(X)
        assert out.shape == (4, 3)
        np.testing.assert_array_equal(out[:, :2], X)
        assert len(np.unique(out[:, 2])) == 4

    def test_cross_feature_objects(self):
        X = np.array([[0, 0, 1], [1, 1, 0]])
        gen = CrossFeatureGenerator(crosses=[CrossFeature(anchor=2, partners=(0,))]).fit(X)
        assert gen.members_ == [(2, 0)]

    def test_unseen_tuple_gets_extra_code(self):
        X = np.array([[0, 0], [1, 1]])
        gen = CrossFeatureGenerator(crosses=[(0, 1)]).fit(X)
        out = gen.transform(np.array([[0, 1], [1, 1]]))
        assert out[0, 2] == len(gen.vocabs_[0])
        assert out[1, 2] < len(gen.vocabs_[0])

    def test_no_crosses(self):
        X = np.array([[0, 1], [1, 0]])
        out = CrossFeatureGenerator(crosses=[]).fit(X).transform(X)
        np.testing.assert_array_equal(out, X)

    def test_searcher_path(self, xor_split):
        X, y, Xt, yt = xor_split
        searcher = FIVESClassifier(embed_dim=4, epochs=20, lr_theta=0.02, lr_arch=0.02, dropout=0.0, batch_size=64)
        gen = CrossFeatureGenerator(searcher=searcher).fit(X, y)
        assert {tuple(sorted(m)) for m in gen.members_} >= {(0, 1)}
        lr = L1LogisticRegression(l1=0.1).fit(gen.transform(X), y)
        assert auc(lr.predict_proba(gen.transform(Xt))[:, 1], yt) > 0.95

    def test_searcher_needs_labels(self):
        with pytest.raises(ValueError, match="labels"):
            CrossFeatureGenerator().fit(np.zeros((4, 2), dtype=int))


class TestL1LogisticRegression:
    def test_separable_signal(self):
        rng = np.random.default_rng(0)
        X = rng.integers(0, 3, size=(600, 2))
        y = (X[:, 0] == 2).astype(int)
        clf = L1LogisticRegression(l1=0.5, max_iter=300).fit(X, y)
        assert auc(clf.predict_proba(X)[:, 1], y) > 0.99
        assert clf.coef_.shape == (1, 6)
        assert clf.intercept_.shape == (1,)
        assert clf.n_iter_ >= 1

    def test_strong_penalty_sparsifies(self):
        rng = np.random.default_rng(1)
        X = rng.integers(0, 4, size=(300, 3))
        y = rng.integers(0, 2, size=300)
        clf = L1LogisticRegression(l1=1e4).fit(X, y)
        assert np.count_nonzero(clf.coef_) == 0

    def test_xor_needs_cross(self, xor_split):
        X, y, Xt, yt = xor_split
        plain = L1LogisticRegression(l1=0.1).fit(X, y)
        assert auc(plain.predict_proba(Xt)[:, 1], yt) < 0.6
        gen = CrossFeatureGenerator(crosses=[(0, 1)]).fit(X)
        crossed = L1LogisticRegression(l1=0.1).fit(gen.transform(X), y)
        assert auc(crossed.predict_proba(gen.transform(Xt))[:, 1], yt) > 0.99

    def test_decision_consistent_with_proba(self):
        X = np.array([[0, 1], [1, 0], [1, 1], [0, 0]] * 10)
        y = np.array([0, 1, 1, 0] * 10)
        clf = L1LogisticRegression(l1=0.01).fit(X, y)
        z = clf.decision_function(X)
        np.testing.assert_allclose(clf.predict_proba(X)[:, 1], 1 / (1 + np.exp(-z)))
        np.testing.assert_array_equal(clf.predict(X), (z >= 0).astype(int))

    def test_unseen_codes_ignored(self):
        X = np.array([[0, 0], [1, 1]] * 5)
        y = np.array([0, 1] * 5)
        clf = L1LogisticRegression(l1=0.01).fit(X, y)
        base = clf.decision_function(np.array([[0, 0]]))
        # an unseen code in column 1 drops that column's contribution
        z = clf.decision_function(np.array([[0, 7]]))
        assert np.isfinite(z).all() and z[0] != base[0]
