"""Zero-forcing and MMSE linear detectors with constellation slicing."""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .ising import SpinMapping
from .model import Constellation, DetectionInstance


class SingularChannelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class LinearSolution:
    v_soft: np.ndarray
    v_hard: np.ndarray
    bits: np.ndarray
    spins: np.ndarray


def slice_to_constellation(v_soft, constellation: Constellation) -> np.ndarray:
    """Nearest constellation point per entry; ties go to the lower point index."""
    v_soft = np.asarray(v_soft)
    pts = constellation.points
    d = np.abs(v_soft[..., None] - pts) ** 2
    return pts[np.argmin(d, axis=-1)]


def _solution(v_soft, constellation: Constellation) -> LinearSolution:
    v_hard = slice_to_constellation(v_soft, constellation)
    mapping = SpinMapping(v_hard.shape[0], constellation)
    spins = mapping.from_symbols(v_hard)
    return LinearSolution(v_soft, v_hard, SpinMapping.to_bits(spins), spins)


def zf_matrix(H: np.ndarray) -> np.ndarray:
    """Pseudo-inverse ``(H^H H)^{-1} H^H``."""
    n_t = H.shape[1]
    if np.linalg.matrix_rank(H) < n_t:
        raise SingularChannelError("channel matrix is not full column rank")
    Hh = H.conj().T
    return np.linalg.solve(Hh @ H, Hh)


def mmse_matrix(H: np.ndarray, snr_linear: float) -> np.ndarray:
    """``SNR (I + SNR H^H H)^{-1} H^H``; infinite SNR falls back to ZF."""
    if not snr_linear > 0:
        raise ValueError("MMSE needs a positive SNR")
    if math.isinf(snr_linear):
        return zf_matrix(H)
    n_t = H.shape[1]
    Hh = H.conj().T
    return snr_linear * np.linalg.solve(np.eye(n_t) + snr_linear * (Hh @ H), Hh)


class EqualizerCache:
    """Bounded LRU of equalizer matrices keyed by channel content.

    Values are idempotent, so concurrent writers racing on one key are
    harmless (last write wins).
    """

    def __init__(self, maxsize: int = 256):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(kind: str, H: np.ndarray, snr_linear: float) -> tuple:
        digest = hashlib.blake2b(np.ascontiguousarray(H).tobytes(), digest_size=16).hexdigest()
        return kind, H.shape, digest, float(snr_linear)

    def get(self, kind: str, H: np.ndarray, snr_linear: float = math.inf) -> np.ndarray:
        k = self.key(kind, H, snr_linear)
        with self._lock:
            G = self._data.get(k)
            if G is not None:
                self._data.move_to_end(k)
                self.hits += 1
                return G
            self.misses += 1
        G = zf_matrix(H) if kind == "zf" else mmse_matrix(H, snr_linear)
        G.setflags(write=False)
        with self._lock:
            self._data[k] = G
            self._data.move_to_end(k)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return G

    def clear(self) -> None:
        with self._lock:
            self._data.clear()
            self.hits = self.misses = 0


equalizer_cache = EqualizerCache()


def detect_zf(inst: DetectionInstance) -> LinearSolution:
    G = equalizer_cache.get("zf", inst.H)
    return _solution(G @ inst.y, inst.constellation)


def detect_mmse(inst: DetectionInstance) -> LinearSolution:
    G = equalizer_cache.get("mmse", inst.H, inst.snr_linear)
    return _solution(G @ inst.y, inst.constellation)
