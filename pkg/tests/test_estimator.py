import numpy as np
import pytest
from sklearn.base import clone

from grwczsl import GRWZeroShotClassifier
from grwczsl.data import SyntheticSpec, build_static_schedule, generate_synthetic
from grwczsl.exceptions import InvalidInputError


@pytest.fixture(scope="module")
def data():
    spec = SyntheticSpec(n_classes=8, n_tasks=2, samples_per_class=15, d_a=4, d_x=6)
    return generate_synthetic(spec), build_static_schedule(8, 2)


def small(**kw):
    base = dict(epochs=2, batch_size=16, hidden_g=8, hidden_d=8, buffer_capacity=40,
                center_samples=2, random_state=0)
    base.update(kw)
    return GRWZeroShotClassifier(**base)


def test_params_and_clone():
    clf = small(tau=5.0)
    p = clf.get_params()
    assert p["tau"] == 5.0 and p["epochs"] == 2
    c = clone(clf)
    assert c.get_params() == p
    c.set_params(gamma=0.5)
    assert clf.gamma == 0.7


def test_partial_fit_stream(data):
    ds, sched = data
    clf = small()
    for classes in sched.task_classes:
        task = ds.task_data(classes)
        clf.partial_fit(task.features, task.labels, task.attributes)
    assert clf.classes_.tolist() == list(range(8))
    assert len(clf.history_) == 2
    pred = clf.predict(ds.features)
    assert set(pred) <= set(range(8))
    full = clf.predict(ds.features, class_attributes=ds.class_attrs)
    np.testing.assert_array_equal(pred, full)


def test_predict_on_unseen_candidates(data):
    ds, sched = data
    task = ds.task_data(sched.current(1))
    clf = small().partial_fit(task.features, task.labels, task.attributes)
    assert clf.classes_.tolist() == sched.current(1)
    unseen = sched.unseen(1)
    pred = clf.predict(ds.features, class_attributes=ds.class_attrs[unseen], classes=unseen)
    assert set(pred) <= set(unseen)
    proba = clf.predict_proba(ds.features[:5], ds.class_attrs)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_fit_matches_partial_fit(data):
    ds, sched = data
    a = small().fit(ds.features, ds.labels, ds.class_attrs, schedule=sched)
    b = small()
    for classes in sched.task_classes:
        mask = np.isin(ds.labels, classes)
        b.partial_fit(ds.features[mask], ds.labels[mask], {c: ds.class_attrs[c] for c in classes})
    np.testing.assert_array_equal(a.transform(ds.class_attrs), b.transform(ds.class_attrs))
    # refitting starts from scratch
    a.fit(ds.features, ds.labels, ds.class_attrs, schedule=sched)
    np.testing.assert_array_equal(a.transform(ds.class_attrs), b.transform(ds.class_attrs))


def test_transform_and_sample(data):
    ds, _ = data
    clf = small().fit(ds.features, ds.labels, ds.class_attrs)
    assert clf.transform(ds.class_attrs).shape == (8, 6)
    s1 = clf.sample(ds.class_attrs, random_state=3)
    s2 = clf.sample(ds.class_attrs, random_state=3)
    assert s1.shape == (8, 6)
    np.testing.assert_array_equal(s1, s2)


def test_errors(data):
    ds, _ = data
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        small().predict(ds.features)
    with pytest.raises(InvalidInputError):
        small().partial_fit(ds.features, ds.labels, {0: ds.class_attrs[0]})
    clf = small().partial_fit(ds.features[:30], ds.labels[:30], ds.class_attrs[:2])
    with pytest.raises(InvalidInputError):
        clf.partial_fit(ds.features[:30, :3], ds.labels[:30], ds.class_attrs[:2])
