"""scikit-learn style wrappers: scaler, analytic-signal transformer, auto-encoder."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .io import PatchOrigin, PatchSet
from .model import build, get_preset, predict
from .signal import analytic_signal
from .train import TrainConfig, train
from .validation import check_finite, check_patches, restore_layout


class GlobalMaxAbsScaler(TransformerMixin, BaseEstimator):
    """Scale a whole array by one factor so that its peak magnitude is 1."""

    def fit(self, X, y=None):
        X = check_finite(np.asarray(X, dtype=np.float64))
        peak = float(np.abs(X).max()) if X.size else 0.0
        if peak == 0:
            raise ValueError("cannot scale an all-zero array")
        self.scale_ = peak
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X, dtype=np.float64) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X) * self.scale_


class AnalyticSignal(TransformerMixin, BaseEstimator):
    """Complex trace attribute: real part is the data, imaginary part its quadrature.

    Acts along the last axis. With ``demean=True`` the real part is the
    demeaned data, i.e. the textbook analytic signal.
    """

    def __init__(self, demean=False):
        self.demean = demean

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_finite(np.asarray(X, dtype=np.float64))
        z, _ = analytic_signal(X, axis=-1)
        if self.demean:
            return z
        return X + 1j * z.imag


class SeismicAutoencoder(TransformerMixin, BaseEstimator):
    """Train one of the preset auto-encoders on patches and reconstruct data.

    ``fit`` takes real patches (n, h, w) for real presets. Complex presets
    accept complex patches directly or derive them from real ones with
    :class:`AnalyticSignal`. The last ``val_fraction`` of the patches is
    held out for best-epoch selection.
    """

    def __init__(self, preset="R_small", seed=0, learning_rate=1e-3, epochs=100, batch_size=32, val_fraction=0.15):
        self.preset = preset
        self.seed = seed
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction

    def _factor(self):
        return 2 ** get_preset(self.preset).n_pools

    def _prepare(self, X):
        X = check_patches(X, allow_complex=True, multiple_of=self._factor())
        if get_preset(self.preset).domain == "complex" and not np.iscomplexobj(X):
            X = AnalyticSignal().transform(X)
        elif get_preset(self.preset).domain == "real" and np.iscomplexobj(X):
            X = X.real
        return X

    def fit(self, X, y=None):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        X = self._prepare(X)
        n = len(X)
        n_val = max(1, int(round(self.val_fraction * n)))
        if n - n_val < 1:
            raise ValueError(f"need at least 2 patches to hold out a validation set, got {n}")
        re = np.ascontiguousarray(X.real)
        im = np.ascontiguousarray(X.imag) if np.iscomplexobj(X) else None
        origins = [PatchOrigin("inline", i, 0, 0) for i in range(n)]
        full = PatchSet(re, im, origins)
        sets = {"train": full.subset(np.arange(n - n_val)), "val": full.subset(np.arange(n - n_val, n))}
        cfg = TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size, seeds=(self.seed,)
        )
        model = build(self.preset, seed=self.seed)
        self.model_, self.log_ = train(model, sets, cfg, seed=self.seed)
        self.n_features_in_ = X.shape[2] * X.shape[3]
        return self

    def transform(self, X):
        """Reconstruction with the layout of ``X``; complex for complex input to a complex model."""
        check_is_fitted(self, "model_")
        original = X
        X = self._prepare(X)
        out = predict(self.model_, X)
        if not np.iscomplexobj(original):
            out = out.real
        return restore_layout(out, original)

    predict = transform

    def score(self, X, y=None):
        """Negative mse of the real-component reconstruction."""
        X_real = np.asarray(X).real
        return -float(np.mean((self.transform(np.asarray(X)).real - X_real) ** 2))
