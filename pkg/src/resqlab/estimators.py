"""Scikit-learn style detectors.

``fit(H)`` binds a channel (one coherence interval); ``predict(Y)`` detects
each row of ``Y`` as one channel use::

    det = XResQDetector(modulation="16qam", snr_db=20, l_p=4).fit(H)
    symbols = det.predict(Y)
    bits = det.predict_bits(Y)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ensemble import DetectorConfig, Strategy, detect
from .linear import mmse_matrix, slice_to_constellation, zf_matrix
from .model import Constellation, DetectionInstance, sigma2_for_snr
from .oracle import DEFAULT_BUDGET
from .pt import PtConfig
from .validation import check_bits, check_channel, check_received


class _BaseDetector(BaseEstimator):
    def fit(self, H, y=None):
        H = check_channel(H)
        self.channel_ = H
        self.n_r_, self.n_t_ = H.shape
        self.constellation_ = Constellation.from_name(self.modulation)
        self.sigma2_ = sigma2_for_snr(float(self.snr_db), self.n_t_, self.constellation_)
        self._fit_channel(H)
        return self

    def _fit_channel(self, H):
        pass

    def _instance(self, y) -> DetectionInstance:
        return DetectionInstance(self.channel_, y, self.constellation_, float(self.snr_db), self.sigma2_)

    def predict(self, Y) -> np.ndarray:
        """Hard symbol decisions, shape (n_uses, n_t)."""
        check_is_fitted(self, "channel_")
        Y = check_received(Y, self.n_r_)
        return np.stack([self._detect(y) for y in Y])

    def predict_bits(self, Y) -> np.ndarray:
        v = self.predict(Y)
        c = self.constellation_
        spins = c.spin_patterns[np.argmin(np.abs(v[..., None] - c.points), axis=-1)]
        return ((spins.reshape(v.shape[0], -1) + 1) // 2).astype(np.uint8)

    def score(self, Y, bits) -> float:
        """``1 - BER`` against the transmitted bits."""
        pred = self.predict_bits(Y)
        bits = check_bits(bits, pred.shape[0], pred.shape[1])
        return 1.0 - float(np.mean(pred != bits))


class LinearDetector(TransformerMixin, _BaseDetector):
    """ZF or MMSE equalizer; ``transform`` returns the unsliced estimates."""

    def __init__(self, method="mmse", modulation="QPSK", snr_db=20.0):
        self.method = method
        self.modulation = modulation
        self.snr_db = snr_db

    def _fit_channel(self, H):
        if self.method == "zf":
            self.equalizer_ = zf_matrix(H)
        elif self.method == "mmse":
            snr = self.n_t_ * self.constellation_.mean_energy / self.sigma2_ if self.sigma2_ else np.inf
            self.equalizer_ = mmse_matrix(H, snr)
        else:
            raise ValueError(f"method must be 'zf' or 'mmse', got {self.method!r}")

    def transform(self, Y) -> np.ndarray:
        check_is_fitted(self, "equalizer_")
        Y = check_received(Y, self.n_r_)
        return Y @ self.equalizer_.T

    def _detect(self, y):
        return slice_to_constellation(self.equalizer_ @ y, self.constellation_)


class _EnsembleDetector(_BaseDetector):
    def _config(self) -> DetectorConfig:
        raise NotImplementedError

    def _detect(self, y):
        return self.detect(y).v_hat

    def detect(self, y):
        """Full :class:`~resqlab.ensemble.DetectionResult` for one channel use."""
        check_is_fitted(self, "channel_")
        y = check_received(y, self.n_r_)[0]
        return detect(self._instance(y), self._config())

    def _pt(self) -> PtConfig:
        return PtConfig(n_replicas=self.n_replicas, n_sweeps=self.n_sweeps)


class XResQDetector(_EnsembleDetector):
    """MMSE-seeded multi-seed parallel tempering ensemble."""

    def __init__(self, modulation="QPSK", snr_db=20.0, l_p=4, split=False, n_sweeps=50,
                 n_replicas=8, random_state=0):
        self.modulation = modulation
        self.snr_db = snr_db
        self.l_p = l_p
        self.split = split
        self.n_sweeps = n_sweeps
        self.n_replicas = n_replicas
        self.random_state = random_state

    def _config(self):
        st = Strategy.XRESQ_SPLIT if self.split else Strategy.XRESQ
        return DetectorConfig(st, self.l_p, pt=self._pt(), rng_seed=self.random_state)


class ParaMaxDetector(_EnsembleDetector):
    """Randomly initialized parallel tempering with sample parallelism."""

    def __init__(self, modulation="QPSK", snr_db=20.0, l_p=4, n_sweeps=50, n_replicas=8,
                 random_state=0):
        self.modulation = modulation
        self.snr_db = snr_db
        self.l_p = l_p
        self.n_sweeps = n_sweeps
        self.n_replicas = n_replicas
        self.random_state = random_state

    def _config(self):
        return DetectorConfig(Strategy.PARAMAX, self.l_p, pt=self._pt(), rng_seed=self.random_state)


class IoTResQDetector(_EnsembleDetector):
    """FSD decomposition with one seeded PT solve per expanded branch."""

    def __init__(self, modulation="QPSK", snr_db=20.0, n_fs=1, n_sweeps=50, n_replicas=8,
                 random_state=0):
        self.modulation = modulation
        self.snr_db = snr_db
        self.n_fs = n_fs
        self.n_sweeps = n_sweeps
        self.n_replicas = n_replicas
        self.random_state = random_state

    def _config(self):
        return DetectorConfig(Strategy.IOTRESQ, None, self.n_fs, self._pt(), self.random_state,
                              modulation=self.modulation)


class MLDetector(_EnsembleDetector):
    """Exhaustive maximum-likelihood search."""

    def __init__(self, modulation="QPSK", snr_db=20.0, budget=DEFAULT_BUDGET):
        self.modulation = modulation
        self.snr_db = snr_db
        self.budget = budget

    def detect(self, y):
        check_is_fitted(self, "channel_")
        y = check_received(y, self.n_r_)[0]
        return detect(self._instance(y), DetectorConfig(Strategy.BRUTE_FORCE), budget=self.budget)
