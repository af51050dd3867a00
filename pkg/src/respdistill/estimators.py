"""scikit-learn compatible wrappers around the MLP and the mean-logit ensemble."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .exceptions import ConfigError
from .model import TrainConfig, forward, init_params, train
from .numerics import softmax
from .softlabel import check_simplex


class SoftLabelMLPClassifier(ClassifierMixin, BaseEstimator):
    """ReLU MLP trained with Adam + cosine schedule on hard or soft targets.

    ``fit(X, y)`` accepts either a 1-D label vector or an ``(n, n_classes)``
    matrix of per-sample target distributions. With soft targets the classes
    are ``0..n_classes-1``. Pass ``target_hook`` to ``fit`` to re-draw
    targets before every batch (see :func:`respdistill.model.train`).
    """

    def __init__(self, hidden_layer_sizes=(32, 32), learning_rate=1e-3, epochs=200, batch_size=128,
                 mask_width=0, shuffle=True, random_state=1):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.mask_width = mask_width
        self.shuffle = shuffle
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            lr_max=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state,
            mask_width=self.mask_width,
            shuffle=self.shuffle,
            hidden_sizes=tuple(self.hidden_layer_sizes),
        )

    def fit(self, X, y, target_hook=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=1)
        y_arr = np.asarray(y)
        if y_arr.ndim == 2:
            T = check_array(y_arr, dtype=np.float64)
            if T.shape[0] != X.shape[0]:
                raise ValueError(f"y has {T.shape[0]} rows, X has {X.shape[0]}")
            self.classes_ = np.arange(T.shape[1])
            if not check_simplex(T):
                raise ValueError("soft targets must be probability distributions")
        else:
            self.classes_, codes = np.unique(y_arr, return_inverse=True)
            if self.classes_.size < 2:
                raise ValueError("need at least two classes")
            T = np.eye(self.classes_.size)[codes]
        cfg = self._train_config()
        params = init_params(cfg.layer_sizes(X.shape[1], self.classes_.size), cfg.seed)
        result = train(params, X, None if target_hook else T, cfg, refresh=target_hook)
        self.params_ = result.params
        self.loss_curve_ = list(result.loss_trace)
        self.n_iter_ = result.steps
        self.train_config_ = cfg
        return self

    def decision_function(self, X):
        """Raw logits, shape ``(n_samples, n_classes)``."""
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return forward(self.params_, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        z = self.decision_function(X)
        return self.classes_[np.argmax(z, axis=1)]

    @classmethod
    def from_params(cls, params, cfg=None, classes=None):
        """Wrap already-trained parameters (e.g. a loaded checkpoint)."""
        cfg = cfg or TrainConfig(hidden_sizes=params.layer_sizes[1:-1])
        est = cls(
            hidden_layer_sizes=cfg.hidden_sizes, learning_rate=cfg.lr_max, epochs=cfg.epochs,
            batch_size=cfg.batch_size, mask_width=cfg.mask_width, shuffle=cfg.shuffle, random_state=cfg.seed,
        )
        est.params_ = params
        est.classes_ = np.arange(params.n_classes) if classes is None else np.asarray(classes)
        est.n_features_in_ = params.n_inputs
        est.loss_curve_ = []
        est.train_config_ = cfg
        return est


class LogitEnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Average the logits of fitted members and predict the largest.

    Only the first ``k`` members are used (all when ``k`` is None). Ties go
    to the lowest class index. ``fit`` fits any member that is not fitted
    yet, so an unfitted list of :class:`SoftLabelMLPClassifier` with
    different seeds gives a seed ensemble.
    """

    def __init__(self, estimators, k=None):
        self.estimators = estimators
        self.k = k

    def _members(self):
        members = list(self.estimators)
        k = len(members) if self.k is None else self.k
        if not 1 <= k <= len(members):
            raise ConfigError(f"k={k} outside 1..{len(members)}")
        return members[:k]

    def fit(self, X, y):
        members = self._members()
        for est in members:
            try:
                check_is_fitted(est)
            except NotFittedError:
                est.fit(X, y)
        self.classes_ = members[0].classes_
        self.n_features_in_ = members[0].n_features_in_
        self.members_ = members
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        return np.mean([m.decision_function(X) for m in self.members_], axis=0)

    def predict(self, X):
        z = self.decision_function(X)
        return self.classes_[np.argmax(z, axis=1)]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))
