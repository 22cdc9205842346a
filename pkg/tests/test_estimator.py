import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import MinMaxScaler

from linfdist.estimator import LInfDistClassifier


def _blobs(rng, n=150):
    centers = np.array([[0.2, 0.2], [0.8, 0.2], [0.5, 0.9]])
    y = rng.integers(0, 3, n)
    X = centers[y] + rng.standard_normal((n, 2)) * 0.06
    return np.clip(X, 0, 1).astype(np.float32), y


def test_fit_predict_beats_chance(rng):
    X, y = _blobs(rng)
    clf = LInfDistClassifier(hidden_width=24, depth=2, e1=3, e2=6, e3=2,
                             hinge_t=0.4, batch_size=32, seed=0)
    clf.fit(X, y)
    assert clf.score(X, y) > 0.8
    assert clf.decision_function(X).shape == (len(y), 3)


def test_classes_mapping_preserved(rng):
    X, y = _blobs(rng, n=90)
    labels = np.array(["ant", "bee", "cat"])[y]
    clf = LInfDistClassifier(hidden_width=16, depth=1, e1=2, e2=3, e3=1,
                             hinge_t=0.3, batch_size=32, seed=0)
    clf.fit(X, labels)
    preds = clf.predict(X)
    assert set(preds) <= {"ant", "bee", "cat"}


def test_get_set_params_and_clone():
    clf = LInfDistClassifier(hidden_width=32, seed=4)
    params = clf.get_params()
    assert params["hidden_width"] == 32
    clf2 = clone(clf)
    assert clf2.get_params() == params
    clf2.set_params(depth=5)
    assert clf2.depth == 5 and clf.depth == 2


def test_unfitted_raises(rng):
    with pytest.raises(NotFittedError):
        LInfDistClassifier().predict(np.zeros((1, 2), dtype=np.float32))


def test_determinism(rng):
    X, y = _blobs(rng, n=80)
    a = LInfDistClassifier(hidden_width=16, depth=1, e1=2, e2=2, e3=1,
                           hinge_t=0.3, batch_size=32, seed=1).fit(X, y)
    b = LInfDistClassifier(hidden_width=16, depth=1, e1=2, e2=2, e3=1,
                           hinge_t=0.3, batch_size=32, seed=1).fit(X, y)
    np.testing.assert_array_equal(a.decision_function(X), b.decision_function(X))


def test_certified_radius_and_certify(rng):
    X, y = _blobs(rng)
    clf = LInfDistClassifier(hidden_width=24, depth=2, e1=3, e2=6, e3=2,
                             hinge_t=0.4, batch_size=32, seed=0).fit(X, y)
    radii = clf.certified_radius(X)
    assert radii.shape == (len(y),)
    assert (radii >= 0).all()
    certified = clf.certify(X, y, eps=0.01)
    assert certified.dtype == bool
    # a certificate at eps requires a radius above eps and a correct label
    correct = clf.predict(X) == y
    assert not (certified & ~correct).any()
    assert not (certified & (radii <= 0.01)).any()


def test_composite_head_uses_ibp(rng):
    X, y = _blobs(rng, n=100)
    clf = LInfDistClassifier(hidden_width=16, depth=1, head_width=8,
                             eps_train=0.02, kappa=0.5, e1=2, e2=3, e3=1,
                             batch_size=32, seed=0).fit(X, y)
    assert clf.net_.kind == "composite"
    certified = clf.certify(X, y, eps=0.005)
    assert certified.dtype == bool
    with pytest.raises(ValueError):
        clf.certified_radius(X)


def test_works_in_sklearn_pipeline(rng):
    X, y = _blobs(rng, n=80)
    pipe = make_pipeline(
        MinMaxScaler(),
        LInfDistClassifier(hidden_width=12, depth=1, e1=2, e2=2, e3=0,
                           hinge_t=0.3, batch_size=32, seed=0))
    pipe.fit(X, y)
    assert 0.0 <= pipe.score(X, y) <= 1.0
