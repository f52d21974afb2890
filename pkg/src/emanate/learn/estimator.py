"""scikit-learn style wrappers around the numpy network and the feature scaler."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import InvalidArgumentError
from .nn import ConvNetModel
from .train import TrainConfig, evaluate, train_arrays

__all__ = ["ResidualSpectralClassifier", "SpectralScaler"]


def _as_float_array(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2:
        raise InvalidArgumentError(f"expected a batch of feature arrays, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("features contain NaN or infinite values")
    return X


class SpectralScaler(TransformerMixin, BaseEstimator):
    """Standardize with one mean and one standard deviation over all training values.

    Per-feature statistics would erase the relative spike heights the
    classifier relies on, so a single global pair is used.
    """

    def __init__(self, eps: float = 1e-12):
        self.eps = eps

    def fit(self, X, y=None):
        X = _as_float_array(X)
        self.mean_ = float(X.mean())
        self.scale_ = float(max(X.std(), self.eps))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = _as_float_array(X)
        return ((X - self.mean_) / self.scale_).astype(np.float32)

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


class ResidualSpectralClassifier(ClassifierMixin, BaseEstimator):
    """Residual CNN classifier over spectra or spectrograms.

    ``X`` of shape ``(n, channels, length)`` trains a 1-D network; shape
    ``(n, channels, height, width)`` trains a 2-D one.  ``fit`` accepts an
    optional validation set used for best-epoch selection; without it the
    training set is used.
    """

    def __init__(
        self,
        widths=(16, 32, 64),
        learning_rate: float = 0.02,
        batch_size: int = 32,
        epochs: int = 12,
        weight_decay: float = 1e-4,
        momentum: float = 0.9,
        seed: int = 0,
    ):
        self.widths = widths
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            weight_decay=self.weight_decay,
            momentum=self.momentum,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = _as_float_array(X)
        if X.ndim not in (3, 4):
            raise InvalidArgumentError(
                f"X must be (n, channels, length) or (n, channels, height, width), got {X.shape}"
            )
        y = [str(v) for v in y]
        if len(y) != X.shape[0]:
            raise InvalidArgumentError(f"{X.shape[0]} feature rows but {len(y)} labels")
        if X_val is None:
            X_val, y_val = X, y
        else:
            X_val = _as_float_array(X_val)
            y_val = [str(v) for v in y_val]
        self.classes_ = np.array(sorted(set(y)))
        model = ConvNetModel(
            X.shape[1:], self.classes_.tolist(), dims=X.ndim - 2, widths=self.widths, seed=self.seed
        )
        self.model_, self.history_ = train_arrays(model, (X, y), (X_val, y_val), self._train_config())
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    @classmethod
    def from_model(cls, model: ConvNetModel, **params) -> "ResidualSpectralClassifier":
        """Wrap an already-trained network (e.g. one loaded from a checkpoint)."""
        est = cls(widths=model.widths, seed=model.seed, **params)
        est.model_ = model
        est.classes_ = np.array(model.classes)
        est.history_ = []
        est.n_features_in_ = int(np.prod(model.input_shape))
        return est

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.forward(_as_float_array(X))

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(_as_float_array(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def metrics(self, X, y):
        check_is_fitted(self, "model_")
        return evaluate(self.model_, _as_float_array(X), [str(v) for v in y])
