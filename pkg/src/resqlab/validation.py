"""Input validation for the estimator interface."""

from __future__ import annotations

import numpy as np


def check_channel(H) -> np.ndarray:
    """Channel matrix as a finite complex (n_r, n_t) array with n_r >= n_t."""
    H = np.asarray(H)
    if H.ndim != 2:
        raise ValueError(f"expected a 2-D channel matrix, got shape {H.shape}")
    if not np.issubdtype(H.dtype, np.number):
        raise TypeError(f"channel must be numeric, got dtype {H.dtype}")
    H = H.astype(np.complex128)
    if not np.all(np.isfinite(H)):
        raise ValueError("channel matrix contains NaN or inf")
    n_r, n_t = H.shape
    if not n_r >= n_t >= 1:
        raise ValueError(f"need n_r >= n_t >= 1, got a {n_r}x{n_t} channel")
    return H


def check_received(Y, n_r: int) -> np.ndarray:
    """Received vectors as a (n_uses, n_r) complex array; one vector is
    promoted to a single row."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != n_r:
        raise ValueError(f"received data must have shape (n_uses, {n_r}), got {np.shape(Y)}")
    if not np.issubdtype(Y.dtype, np.number):
        raise TypeError(f"received data must be numeric, got dtype {Y.dtype}")
    Y = Y.astype(np.complex128)
    if not np.all(np.isfinite(Y)):
        raise ValueError("received data contains NaN or inf")
    return Y


def check_bits(bits, n_uses: int, n_bits: int) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.shape != (n_uses, n_bits):
        raise ValueError(f"bits must have shape ({n_uses}, {n_bits}), got {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bits must be 0/1")
    return bits.astype(np.uint8)
