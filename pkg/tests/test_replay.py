import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grwczsl.data import TaskData
from grwczsl.exceptions import ConfigError, StateError
from grwczsl.replay import ReplayBuffer, end_of_task_update, per_class_counts, sample_batch


def make_task(classes, per_class=20, d_x=3, d_a=2, offset=0.0):
    X = np.concatenate([np.full((per_class, d_x), c + offset) for c in classes])
    y = np.repeat(classes, per_class)
    attrs = {c: np.full(d_a, float(c)) for c in classes}
    return TaskData(X, y, attrs)


class MisclassifiesSeven:
    """Generates the class id as a feature; predicts it back except for class 7."""

    def sample_features(self, attrs):
        return attrs[:, :1].copy()

    def predict_seen(self, X):
        pred = X[:, 0].astype(int)
        pred[pred == 7] = 0
        return pred


def quota_oracle(B, n):
    # floor share, remainder to the lowest class ids
    return [B // n + (1 if i < B % n else 0) for i in range(n)]


class TestUpdate:
    def test_uneven_split(self):
        buf = ReplayBuffer(10)
        end_of_task_update(buf, make_task([0, 1, 2, 3]))
        assert per_class_counts(buf) == {0: 3, 1: 3, 2: 2, 3: 2}

    def test_even_split(self):
        buf = ReplayBuffer(6)
        buf.update(make_task([0, 1, 2]))
        assert list(per_class_counts(buf).values()) == [2, 2, 2]

    def test_rebalances_across_tasks(self):
        buf = ReplayBuffer(10)
        buf.update(make_task([0, 1]))
        assert per_class_counts(buf) == {0: 5, 1: 5}
        buf.update(make_task([2, 3]))
        assert per_class_counts(buf) == {0: 3, 1: 3, 2: 2, 3: 2}

    def test_budget_below_class_count(self):
        buf = ReplayBuffer(3)
        buf.update(make_task([0, 1, 2, 3, 4]))
        assert per_class_counts(buf) == {0: 1, 1: 1, 2: 1, 3: 0, 4: 0}

    def test_stored_rows_come_from_their_class(self):
        buf = ReplayBuffer(12)
        buf.update(make_task([0, 1]))
        buf.update(make_task([2]))
        for c, X in buf.store.items():
            assert np.all(X == c)

    def test_empty_task(self):
        with pytest.raises(StateError):
            ReplayBuffer(10).update(TaskData(np.zeros((0, 2)), np.zeros(0, int), {}))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            ReplayBuffer(10, mode="oracle")
        with pytest.raises(ConfigError):
            ReplayBuffer(-1)

    def test_attr_bank_is_permanent(self):
        buf = ReplayBuffer(0)
        buf.update(make_task([0, 1]))
        buf.update(make_task([2]))
        assert buf.seen_classes == [0, 1, 2]
        np.testing.assert_array_equal(buf.attr_bank[1], [1.0, 1.0])

    def test_deterministic(self):
        a, b = ReplayBuffer(7, seed=3), ReplayBuffer(7, seed=3)
        rng = np.random.default_rng(0)
        task = TaskData(rng.normal(size=(40, 3)), np.repeat([0, 1], 20), {0: np.ones(2), 1: np.zeros(2)})
        a.update(task)
        b.update(task)
        assert a.items()[0].tobytes() == b.items()[0].tobytes()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 60), st.lists(st.integers(1, 4), min_size=1, max_size=4))
    def test_quota_rule(self, B, task_sizes):
        buf = ReplayBuffer(B)
        start = 0
        for size in task_sizes:
            buf.update(make_task(list(range(start, start + size)), per_class=B + 1))
            start += size
            counts = per_class_counts(buf)
            assert list(counts.values()) == quota_oracle(B, start)
            assert len(buf) == min(B, sum(counts.values()))


class TestGenerative:
    def test_misclassified_class_stores_nothing(self):
        buf = ReplayBuffer(mode="generative", generative_per_class=50)
        buf.update(make_task([5, 6, 7]), MisclassifiesSeven())
        assert per_class_counts(buf) == {5: 50, 6: 50, 7: 0}

    def test_needs_classifier(self):
        with pytest.raises(StateError):
            ReplayBuffer(mode="generative").update(make_task([0, 1]))


class TestSampleBatch:
    def test_empty_buffer(self):
        X, y, A = sample_batch(ReplayBuffer(10), 8, np.random.default_rng(0))
        assert len(X) == len(y) == len(A) == 0

    def test_single_item(self):
        buf = ReplayBuffer(1)
        buf.update(make_task([4], per_class=1))
        X, y, A = sample_batch(buf, 3, np.random.default_rng(0))
        np.testing.assert_array_equal(y, [4, 4, 4])
        np.testing.assert_array_equal(X, np.full((3, 3), 4.0))
        np.testing.assert_array_equal(A, np.full((3, 2), 4.0))

    def test_uniform_over_classes(self):
        buf = ReplayBuffer(20)
        buf.update(make_task([0, 1]))
        _, y, _ = sample_batch(buf, 10_000, np.random.default_rng(1))
        freq = np.bincount(y) / len(y)
        assert np.all((freq >= 0.48) & (freq <= 0.52))


def test_fresh_buffer_counts():
    assert per_class_counts(ReplayBuffer()) == {}


def test_to_csv(tmp_path):
    buf = ReplayBuffer(4)
    buf.update(make_task([0, 1]))
    path = tmp_path / "buf.csv"
    buf.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["class_id", "f0", "f1", "f2"]
    assert [r[0] for r in rows[1:]] == ["0", "0", "1", "1"]
    assert float(rows[-1][1]) == 1.0
