"""scikit-learn style front end for the full model.

``McihnRegressor`` wraps configuration, training and prediction behind the
usual ``fit`` / ``predict`` / ``get_params`` surface so the model drops into
pipelines and model-selection tooling. X is a sequence of ``ModalSample``;
``y`` may override the labels stored on the samples.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import ModalSample
from .train import Checkpoint, TrainConfig, predict_all, train


def _as_samples(X: Sequence[ModalSample], y=None) -> list[ModalSample]:
    if not len(X):
        raise ValueError("X must contain at least one sample")
    samples = list(X)
    for i, s in enumerate(samples):
        if not isinstance(s, ModalSample):
            raise TypeError(f"X[{i}] is {type(s).__name__}, expected ModalSample")
    if y is not None:
        y = np.asarray(y, dtype=np.float64)
        if len(y) != len(samples):
            raise ValueError(f"len(y)={len(y)} does not match len(X)={len(samples)}")
        samples = [
            ModalSample(s.x_v, s.x_t, s.x_a, float(label))
            for s, label in zip(samples, y)
        ]
    return samples


class McihnRegressor(BaseEstimator, RegressorMixin):
    """Trainable multimodal sentiment regressor with an sklearn interface.

    Shapes are inferred from the training data. A validation split is carved
    out of X for early stopping unless ``validation`` is supplied.
    """

    def __init__(
        self,
        latent_len: int = 8,
        latent_dim: int = 16,
        heads: int = 4,
        lr: float = 1e-3,
        batch_size: int = 32,
        max_epochs: int = 100,
        patience: int = 10,
        dropout: float = 0.5,
        adaptation: bool = True,
        ablation: str = "full",
        mmd_kernel: str = "linear",
        rbf_bandwidth: Optional[float] = None,
        scheme: str = "mosi",
        seed: int = 0,
        val_fraction: float = 0.15,
    ):
        self.latent_len = latent_len
        self.latent_dim = latent_dim
        self.heads = heads
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.dropout = dropout
        self.adaptation = adaptation
        self.ablation = ablation
        self.mmd_kernel = mmd_kernel
        self.rbf_bandwidth = rbf_bandwidth
        self.scheme = scheme
        self.seed = seed
        self.val_fraction = val_fraction

    def _config(self, shapes: dict[str, tuple[int, int]]) -> TrainConfig:
        return TrainConfig(
            shapes=shapes,
            latent_len=self.latent_len,
            latent_dim=self.latent_dim,
            heads=self.heads,
            lr=self.lr,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            dropout=self.dropout,
            adaptation=self.adaptation,
            ablation=self.ablation,
            mmd_kernel=self.mmd_kernel,
            rbf_bandwidth=self.rbf_bandwidth,
            scheme=self.scheme,
            seed=self.seed,
        )

    def fit(self, X: Sequence[ModalSample], y=None, validation: Optional[Sequence[ModalSample]] = None):
        samples = _as_samples(X, y)
        config = self._config(samples[0].shapes())
        if validation is not None:
            train_set, valid_set = samples, list(validation)
        else:
            n_val = max(1, int(round(self.val_fraction * len(samples))))
            if n_val >= len(samples):
                train_set, valid_set = samples, samples
            else:
                order = np.random.default_rng(self.seed).permutation(len(samples))
                valid_idx = set(order[:n_val].tolist())
                train_set = [s for i, s in enumerate(samples) if i not in valid_idx]
                valid_set = [s for i, s in enumerate(samples) if i in valid_idx]
        self.checkpoint_, self.history_ = train(config, train_set, valid_set)
        self.config_ = config
        return self

    def predict(self, X: Sequence[ModalSample]) -> np.ndarray:
        self._require_fitted()
        samples = _as_samples(X)
        return np.asarray(
            predict_all(self.checkpoint_.params, samples, self.batch_size), dtype=np.float64
        )

    def score(self, X: Sequence[ModalSample], y=None, sample_weight=None) -> float:
        """Coefficient of determination against y (or the stored labels)."""
        if y is None:
            y = [s.label for s in X]
        return super().score(X, np.asarray(y, dtype=np.float64), sample_weight)

    def _require_fitted(self) -> None:
        if not hasattr(self, "checkpoint_"):
            raise RuntimeError("this McihnRegressor instance is not fitted yet")

    @property
    def best_val_mae_(self) -> float:
        self._require_fitted()
        return self.checkpoint_.best_val_mae

    def save_checkpoint(self, path) -> None:
        self._require_fitted()
        self.checkpoint_.save(path)

    @classmethod
    def from_checkpoint(cls, path) -> "McihnRegressor":
        checkpoint = Checkpoint.load(path)
        cfg = checkpoint.config
        est = cls(
            latent_len=cfg.latent_len,
            latent_dim=cfg.latent_dim,
            heads=cfg.heads,
            lr=cfg.lr,
            batch_size=cfg.batch_size,
            max_epochs=cfg.max_epochs,
            patience=cfg.patience,
            dropout=cfg.dropout,
            adaptation=cfg.adaptation,
            ablation=cfg.ablation,
            mmd_kernel=cfg.mmd_kernel,
            rbf_bandwidth=cfg.rbf_bandwidth,
            scheme=cfg.scheme,
            seed=cfg.seed,
        )
        est.checkpoint_ = checkpoint
        est.config_ = cfg
        est.history_ = []
        return est
