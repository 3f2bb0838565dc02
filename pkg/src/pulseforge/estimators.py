"""Estimator-style wrappers: fit/transform/predict over frame sequences.

These follow the scikit-learn parameter conventions (constructor stores
hyperparameters verbatim, fitted state gets a trailing underscore, get_params
and set_params come from BaseEstimator) so the pipeline composes with
standard model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .analysis import estimate_hr
from .baselines import BASELINES
from .core import BvpSignal, FrameSequence
from .network import NetworkConfig, NetworkWeights, init_weights, train
from .pipeline import infer_sequence, make_training_set
from .validation import require


def check_sequences(X, need_truth: bool = False) -> list[FrameSequence]:
    """Validate an iterable of FrameSequence inputs."""
    seqs = list(X)
    require(len(seqs) > 0, "need at least one sequence")
    for i, s in enumerate(seqs):
        require(isinstance(s, FrameSequence), f"X[{i}] is not a FrameSequence")
        require(s.face_boxes is not None, f"X[{i}] has no face boxes")
        if need_truth:
            require(s.ground_truth is not None, f"X[{i}] has no reference pulse")
    return seqs


class PulseNetEstimator(BaseEstimator):
    """Learned pulse estimator with a scikit-learn surface.

    fit trains the temporal-shift network on sequences that carry a reference
    pulse; transform returns the recovered pulse per sequence; predict returns
    the dominant heart rate in bpm.
    """

    def __init__(self, window_len: int = 10, branches: str = "multi",
                 drop1: float = 0.25, drop2: float = 0.5,
                 enlarge_ratio: float = 0.0, use_mask: bool = True,
                 use_shift: bool = True, norm_order: str = "affine-first",
                 epochs: int = 10, batch_size: int = 32, lr: float = 1.0,
                 seed: int = 0):
        self.window_len = window_len
        self.branches = branches
        self.drop1 = drop1
        self.drop2 = drop2
        self.enlarge_ratio = enlarge_ratio
        self.use_mask = use_mask
        self.use_shift = use_shift
        self.norm_order = norm_order
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _config(self) -> NetworkConfig:
        return NetworkConfig(window_len=self.window_len, branches=self.branches,
                             drop1=self.drop1, drop2=self.drop2,
                             norm_order=self.norm_order)

    def fit(self, X, y=None):
        seqs = check_sequences(X, need_truth=True)
        dataset = make_training_set(seqs, self.window_len,
                                    enlarge_ratio=self.enlarge_ratio)
        w0 = init_weights(self._config(), self.seed)
        result = train(dataset, weights=w0, epochs=self.epochs,
                       batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                       use_mask=self.use_mask, use_shift=self.use_shift)
        self.weights_ = result.weights
        self.losses_ = result.epoch_losses
        return self

    def load(self, weights: NetworkWeights):
        """Adopt pre-trained weights instead of fitting."""
        require(weights.cfg.window_len == self.window_len,
                "weights were trained with a different window length")
        self.weights_ = weights
        self.losses_ = []
        return self

    def transform(self, X) -> list[BvpSignal]:
        check_is_fitted(self, "weights_")
        seqs = check_sequences(X)
        return [infer_sequence(s, self.weights_,
                               enlarge_ratio=self.enlarge_ratio,
                               use_mask=self.use_mask,
                               use_shift=self.use_shift).bvp for s in seqs]

    def predict(self, X) -> np.ndarray:
        return np.array([estimate_hr(b).bpm for b in self.transform(X)])

    def score(self, X, y):
        """Negative mean absolute HR error against reference rates in bpm."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        require(y.shape == pred.shape, "y must hold one reference bpm per sequence")
        return -float(np.mean(np.abs(pred - y)))


class BaselineEstimator(BaseEstimator):
    """Stateless classical extractor behind the same surface."""

    def __init__(self, method: str = "pos"):
        self.method = method

    def fit(self, X=None, y=None):
        require(self.method in BASELINES,
                f"unknown method '{self.method}', expected one of {sorted(BASELINES)}")
        self.method_ = BASELINES[self.method]
        return self

    def transform(self, X) -> list[BvpSignal]:
        check_is_fitted(self, "method_")
        return [self.method_(s) for s in check_sequences(X)]

    def predict(self, X) -> np.ndarray:
        return np.array([estimate_hr(b).bpm for b in self.transform(X)])
