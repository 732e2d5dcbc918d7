"""scikit-learn compatible front end.

``GRWZeroShotClassifier`` learns one task per :meth:`partial_fit` call and
predicts over whatever class attributes it is handed, so unseen classes can be
scored as soon as their attribute vectors are known::

    clf = GRWZeroShotClassifier(epochs=20, random_state=0)
    for classes in schedule.task_classes:
        task = dataset.task_data(classes)
        clf.partial_fit(task.features, task.labels, task.attributes)
    y_pred = clf.predict(X_test, class_attributes=dataset.class_attrs)
"""
from __future__ import annotations

from typing import Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import TaskData, TaskSchedule
from .exceptions import InvalidInputError
from .linalg import cosine_sim_matrix, row_softmax
from .losses import LossWeights
from .trainer import TrainerConfig, TrainerState, train_task


def _attribute_map(y, class_attributes) -> Mapping[int, np.ndarray]:
    classes = np.unique(y)
    if isinstance(class_attributes, Mapping):
        missing = [int(c) for c in classes if int(c) not in class_attributes]
        if missing:
            raise InvalidInputError(f"no attributes for classes {missing}")
        return {int(c): np.asarray(class_attributes[int(c)], dtype=np.float64) for c in classes}
    A = check_array(class_attributes, dtype=np.float64)
    if A.shape[0] != len(classes):
        raise InvalidInputError(
            f"got {A.shape[0]} attribute rows for {len(classes)} classes in y")
    return {int(c): A[i] for i, c in enumerate(classes)}


class GRWZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Continual zero-shot classifier trained with generative random walks.

    The discriminator embeds class attributes into feature space; a sample is
    assigned to the class whose embedding is most cosine-similar.

    Parameters mirror :class:`~grwczsl.trainer.TrainerConfig` and
    :class:`~grwczsl.losses.LossWeights`. ``random_state`` seeds everything.
    """

    def __init__(self, *, epochs=50, batch_size=64, lr=0.005, weight_decay=1e-5,
                 hidden_g=64, hidden_d=64, d_z=None, hallucination="interpolation",
                 buffer_capacity=5000, buffer_mode="real", center_samples=5,
                 lambda_cls=1.0, lambda_c=1.0, lambda_i=1.0, lambda_rd=1.0,
                 lambda_rg=1.0, tau=10.0, gamma=0.7, R=3, sal_margin=0.1,
                 sal_neighbors=3, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.hidden_g = hidden_g
        self.hidden_d = hidden_d
        self.d_z = d_z
        self.hallucination = hallucination
        self.buffer_capacity = buffer_capacity
        self.buffer_mode = buffer_mode
        self.center_samples = center_samples
        self.lambda_cls = lambda_cls
        self.lambda_c = lambda_c
        self.lambda_i = lambda_i
        self.lambda_rd = lambda_rd
        self.lambda_rg = lambda_rg
        self.tau = tau
        self.gamma = gamma
        self.R = R
        self.sal_margin = sal_margin
        self.sal_neighbors = sal_neighbors
        self.random_state = random_state

    def _make_state(self, d_a, d_x):
        config = TrainerConfig(
            hidden_g=self.hidden_g, hidden_d=self.hidden_d, d_z=self.d_z, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
            buffer_capacity=self.buffer_capacity, buffer_mode=self.buffer_mode,
            hallucination=self.hallucination, center_samples=self.center_samples,
            seed=self.random_state, track_gdb=False)
        weights = LossWeights(
            lambda_cls=self.lambda_cls, lambda_c=self.lambda_c, lambda_i=self.lambda_i,
            lambda_rd=self.lambda_rd, lambda_rg=self.lambda_rg, tau=self.tau,
            gamma=self.gamma, R=self.R, sal_margin=self.sal_margin,
            sal_neighbors=self.sal_neighbors)
        return TrainerState(d_a, d_x, config, weights)

    def partial_fit(self, X, y, class_attributes):
        """Learn one task.

        ``class_attributes`` is either a mapping from class id to attribute
        vector, or an array with one row per class in ``np.unique(y)``.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        attrs = _attribute_map(y, class_attributes)
        d_a = len(next(iter(attrs.values())))
        if not hasattr(self, "state_"):
            self.state_ = self._make_state(d_a, X.shape[1])
            self.n_features_in_ = X.shape[1]
            self.history_ = []
        elif X.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        self.history_.append(train_task(self.state_, TaskData(X, y, attrs)))
        self.classes_ = np.asarray(self.state_.seen_classes())
        return self

    def fit(self, X, y, class_attributes, schedule: Optional[TaskSchedule] = None):
        """Train from scratch over ``schedule`` (one task with every class by default).

        ``class_attributes`` here is the full ``K x d_a`` matrix indexed by
        class id; each task only ever receives its own rows.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        A = check_array(class_attributes, dtype=np.float64)
        if schedule is None:
            schedule = TaskSchedule([sorted(np.unique(y).tolist())])
        for name in ("state_", "classes_", "history_", "n_features_in_"):
            if hasattr(self, name):
                delattr(self, name)
        for classes in schedule.task_classes:
            mask = np.isin(y, classes)
            self.partial_fit(X[mask], y[mask], {c: A[c] for c in classes})
        return self

    def _bank(self, class_attributes, classes):
        if class_attributes is None:
            st = self.state_
            return np.stack([st.buffer.attr_bank[c] for c in self.classes_]), self.classes_
        A = check_array(class_attributes, dtype=np.float64)
        labels = np.arange(A.shape[0]) if classes is None else np.asarray(classes)
        if len(labels) != A.shape[0]:
            raise InvalidInputError("classes and class_attributes disagree in length")
        return A, labels

    def decision_function(self, X, class_attributes=None, classes=None):
        """Cosine similarity between each row and each class embedding."""
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        A, _ = self._bank(class_attributes, classes)
        return cosine_sim_matrix(X, self.state_.embed(A))

    def predict_proba(self, X, class_attributes=None, classes=None):
        return row_softmax(self.tau * self.decision_function(X, class_attributes, classes))

    def predict(self, X, class_attributes=None, classes=None):
        """Predicted class labels.

        Without ``class_attributes`` the candidates are the seen classes;
        pass the full attribute matrix (rows indexed by class id, or labelled
        via ``classes``) to include unseen ones.
        """
        check_is_fitted(self, "state_")
        _, labels = self._bank(class_attributes, classes) if class_attributes is not None \
            else (None, self.classes_)
        return np.asarray(labels)[np.argmax(self.decision_function(X, class_attributes, classes), axis=1)]

    def transform(self, class_attributes):
        """Embed attribute vectors into feature space."""
        check_is_fitted(self, "state_")
        return self.state_.embed(check_array(class_attributes, dtype=np.float64))

    def sample(self, class_attributes, random_state=None):
        """One generated feature per attribute row."""
        check_is_fitted(self, "state_")
        rng = np.random.default_rng(random_state)
        return self.state_.generate(check_array(class_attributes, dtype=np.float64), rng)
