"""Brute-force ML detection and the fixed-complexity sphere decoder (FSD)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .linear import slice_to_constellation
from .model import DetectionInstance

DEFAULT_BUDGET = 2 ** 24
_CHUNK = 2 ** 16


class EnumerationBudgetExceeded(RuntimeError):
    """The candidate space is too large for exhaustive search."""


def _candidate_chunk(points: np.ndarray, n_t: int, start: int, stop: int) -> np.ndarray:
    k = len(points)
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((stop - start, n_t), dtype=np.int64)
    for u in range(n_t - 1, -1, -1):
        digits[:, u] = idx % k
        idx //= k
    return points[digits]


def brute_force_ml(inst: DetectionInstance, budget: int = DEFAULT_BUDGET) -> tuple[np.ndarray, float]:
    """Exact minimizer of ``||y - H v||^2`` over all ``|O|^n_t`` candidates.

    Candidates are scanned in lexicographic order of their per-user point
    indices (user 0 most significant); the first minimizer wins ties.
    """
    pts = inst.constellation.points
    total = len(pts) ** inst.n_t
    if total > budget:
        raise EnumerationBudgetExceeded(
            f"{total} candidates exceed the enumeration budget of {budget}; "
            "use the best-known solution instead"
        )
    best_obj = math.inf
    best_v = None
    Ht = inst.H.T
    for start in range(0, total, _CHUNK):
        stop = min(total, start + _CHUNK)
        V = _candidate_chunk(pts, inst.n_t, start, stop)
        R = inst.y[None, :] - V @ Ht
        obj = np.einsum("ij,ij->i", R.real, R.real) + np.einsum("ij,ij->i", R.imag, R.imag)
        k = int(np.argmin(obj))
        if obj[k] < best_obj:
            best_obj = float(obj[k])
            best_v = V[k].copy()
    # recompute with the same expression used everywhere else
    return best_v, inst.residual(best_v)


@dataclass(frozen=True)
class FsdPlan:
    """Detection order for FSD; the first ``n_fs`` users are fully expanded."""

    n_fs: int
    order: tuple[int, ...]

    def __post_init__(self):
        n_t = len(self.order)
        if sorted(self.order) != list(range(n_t)):
            raise ValueError("order must be a permutation of the users")
        if not 0 <= self.n_fs <= n_t:
            raise ValueError(f"n_fs must lie in [0, {n_t}]")

    @property
    def expanded(self) -> tuple[int, ...]:
        return self.order[:self.n_fs]

    @property
    def greedy(self) -> tuple[int, ...]:
        return self.order[self.n_fs:]

    def subcandidates(self, constellation_size: int) -> int:
        return constellation_size ** self.n_fs

    @classmethod
    def for_channel(cls, H: np.ndarray, n_fs: int) -> "FsdPlan":
        """Iterative norm ordering.

        Full-expansion levels take the remaining user with the largest
        post-detection noise amplification (diagonal of the Gram inverse),
        greedy levels the smallest.
        """
        n_t = H.shape[1]
        if not 0 <= n_fs <= n_t:
            raise ValueError(f"n_fs must lie in [0, {n_t}]")
        remaining = list(range(n_t))
        order = []
        for level in range(n_t):
            Hs = H[:, remaining]
            gram = Hs.conj().T @ Hs
            amp = np.real(np.diag(np.linalg.pinv(gram)))
            pick = int(np.argmax(amp)) if level < n_fs else int(np.argmin(amp))
            order.append(remaining.pop(pick))
        return cls(n_fs, tuple(order))

    @classmethod
    def for_instance(cls, inst: DetectionInstance, n_fs: int) -> "FsdPlan":
        return cls.for_channel(inst.H, n_fs)


@dataclass(frozen=True, eq=False)
class FsdBranch:
    index: int
    expanded_symbols: np.ndarray
    v: np.ndarray
    objective: float


@dataclass(frozen=True, eq=False)
class FsdResult:
    plan: FsdPlan
    branches: list
    mmse_fallback: bool

    @property
    def candidates(self) -> list[tuple[np.ndarray, float]]:
        return [(b.v, b.objective) for b in self.branches]

    @property
    def best(self) -> FsdBranch:
        return min(self.branches, key=lambda b: (b.objective, b.index))

    def __len__(self) -> int:
        return len(self.branches)


def _nulling_rows(inst: DetectionInstance, plan: FsdPlan) -> tuple[list[np.ndarray], bool]:
    """ZF nulling vector for each greedy level (MMSE-regularized on rank loss)."""
    rows = []
    fallback = False
    greedy = list(plan.greedy)
    for k, u in enumerate(greedy):
        Hs = inst.H[:, greedy[k:]]
        Hh = Hs.conj().T
        gram = Hh @ Hs
        if np.linalg.matrix_rank(Hs) < Hs.shape[1]:
            fallback = True
            snr = inst.snr_linear
            reg = 1e-9 if math.isinf(snr) else 1.0 / snr
            W = np.linalg.solve(gram + reg * np.eye(gram.shape[0]), Hh)
        else:
            W = np.linalg.solve(gram, Hh)
        rows.append(W[0])
    return rows, fallback


def fsd_detect(inst: DetectionInstance, plan: FsdPlan) -> FsdResult:
    """Full expansion of ``plan.expanded`` users, SIC completion of the rest.

    Branches are returned in lexicographic order of the expanded users'
    point indices.
    """
    if len(plan.order) != inst.n_t:
        raise ValueError("plan does not match the instance's user count")
    pts = inst.constellation.points
    rows, fallback = _nulling_rows(inst, plan)
    exp = list(plan.expanded)
    greedy = list(plan.greedy)
    branches = []
    for b, combo in enumerate(itertools.product(range(len(pts)), repeat=len(exp))):
        v = np.zeros(inst.n_t, dtype=np.complex128)
        for u, c in zip(exp, combo):
            v[u] = pts[c]
        r = inst.y - inst.H[:, exp] @ v[exp] if exp else inst.y.copy()
        for u, w in zip(greedy, rows):
            v[u] = slice_to_constellation(w @ r, inst.constellation)
            r = r - inst.H[:, u] * v[u]
        branches.append(FsdBranch(b, v[exp].copy(), v, inst.residual(v)))
    return FsdResult(plan, branches, fallback)
