import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from gaitemotion import AffectiveTransformer, GaitEmotionClassifier, RotationTransformer, TemporalPreprocessor
from gaitemotion.exceptions import EmptyError, ShapeError
from gaitemotion.gait_io import generate_synthetic, label_matrix, stack_preprocessed

TINY = dict(embed_dim=18, joint_dim=2, classifier_dims=(4, 2), decoder_hidden=8, epochs=2, batch_size=8)


@pytest.fixture(scope="module")
def data():
    ds = generate_synthetic(10, 4, seed=0)
    return stack_preprocessed(ds.samples), label_matrix(ds.samples), ds


@pytest.fixture(scope="module")
def fitted(data):
    X, y, _ = data
    return GaitEmotionClassifier(**TINY).fit(X, y, X[:10], y[:10])


def test_get_params_and_clone():
    clf = GaitEmotionClassifier(joint_dim=4, use_affective_loss=False)
    params = clf.get_params()
    assert params["joint_dim"] == 4 and params["use_affective_loss"] is False
    twin = clone(clf)
    assert twin.get_params() == params
    assert twin.set_params(epochs=3).epochs == 3


def test_fit_predict(fitted, data):
    X, y, _ = data
    proba = fitted.predict_proba(X)
    assert proba.shape == (14, 4)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(fitted.predict(X), (proba > 0.25).astype(int))
    assert list(fitted.classes_) == ["happy", "sad", "angry", "neutral"]
    assert len(fitted.history_) == 2
    assert fitted.transform(X).shape == (14, 18, 48)
    assert 0 < fitted.score(X, y) <= 1


def test_fit_is_reproducible(data):
    X, y, _ = data
    a = GaitEmotionClassifier(**TINY).fit(X, y).predict_proba(X)
    b = GaitEmotionClassifier(**TINY).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(a, b)


def test_unfitted():
    with pytest.raises(NotFittedError):
        GaitEmotionClassifier().predict(np.zeros((1, 48, 21, 3)))


def test_input_validation(data):
    X, y, _ = data
    clf = GaitEmotionClassifier(**TINY)
    with pytest.raises(ShapeError):
        clf.fit(X[:, :40], y)
    with pytest.raises(ShapeError):
        clf.fit(X, y[:5])
    with pytest.raises(EmptyError):
        clf.fit(X, -np.ones_like(y))
    bad = X.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        clf.fit(bad, y)


def test_pipeline_on_raw_gaits(data):
    _, y, ds = data
    raw = [s.positions for s in ds.samples]
    pipe = make_pipeline(TemporalPreprocessor(), GaitEmotionClassifier(**TINY))
    pipe.fit(raw, y)
    assert pipe.predict(raw).shape == (14, 4)


def test_transformers(data):
    X, _, ds = data
    assert TemporalPreprocessor().fit_transform([s.positions for s in ds.samples]).shape == (14, 48, 21, 3)
    assert RotationTransformer().fit_transform(X).shape == (14, 21, 48, 4)
    assert AffectiveTransformer().fit_transform(X).shape == (14, 18, 48)
    assert AffectiveTransformer(time_mean=True).fit_transform(X).shape == (14, 18)


def test_classifier_only_mode(data):
    X, y, _ = data
    clf = GaitEmotionClassifier(**TINY, use_autoencoder=False, use_affective_loss=False, use_hierarchical_pooling=False)
    clf.fit(X, y)
    assert clf.model_.decoder is None
    assert all(r["ang_loss"] == 0 for r in clf.history_)
