"""Seeded parallel tempering over an :class:`~resqlab.ising.IsingModel`.

Random numbers come from a counter-based hash keyed by
``(seed, phase, temperature slot, sweep, site)``, so a solve is a pure
function of its inputs and never depends on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .ising import IsingModel, check_spins

DRIFT_TOL = 1e-6
CHECK_EVERY = 64

_PHASE_INIT = 0
_PHASE_FLIP = 1
_PHASE_SWAP = 2


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _uniform(seed, phase, slot, sweep, site):
    h = _mix64(seed ^ (np.uint64(phase) * np.uint64(0x9E3779B97F4A7C15)))
    h = _mix64(h ^ (np.uint64(slot) * np.uint64(0xD1B54A32D192ED03)))
    h = _mix64(h ^ (np.uint64(sweep) * np.uint64(0xAEF17502108EF2D9)))
    h = _mix64(h ^ np.uint64(site))
    return np.float64(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def counter_uniform(seed: int, phase: int, slot: int, sweep: int, site: int) -> float:
    """Python entry point to the kernel's counter-based uniform draw."""
    return float(_uniform(np.uint64(seed), phase, slot, sweep, site))


@njit(cache=True)
def _energy_rows(f, J, s):
    n_rep, n = s.shape
    out = np.empty(n_rep)
    for r in range(n_rep):
        e = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(i + 1, n):
                acc += J[i, j] * s[r, j]
            e += s[r, i] * (f[i] + acc)
        out[r] = e
    return out


@njit(cache=True)
def _fields(f, J, s):
    n_rep, n = s.shape
    h = np.empty((n_rep, n))
    for r in range(n_rep):
        for i in range(n):
            acc = f[i]
            for j in range(n):
                acc += J[i, j] * s[r, j]
            h[r, i] = acc
    return h


@njit(cache=True)
def _pt_kernel(f, J, betas, init, random_init, n_sweeps, seed, check_every, record):
    n_rep = betas.shape[0]
    n = f.shape[0]
    s = np.empty((n_rep, n), dtype=np.int8)
    for r in range(n_rep):
        for i in range(n):
            if random_init:
                s[r, i] = 1 if _uniform(seed, _PHASE_INIT, r, 0, i) < 0.5 else -1
            else:
                s[r, i] = init[i]
    h = _fields(f, J, s)
    e = _energy_rows(f, J, s)
    # slot_row[k]: replica row currently held at temperature slot k
    slot_row = np.arange(n_rep)

    best_e = e[0]
    best_s = s[0].copy()
    for r in range(1, n_rep):
        if e[r] < best_e:
            best_e = e[r]
            best_s[:] = s[r]

    n_rec = n_sweeps if record else 0
    trace_e = np.empty((n_rec, n_rep))
    trace_s = np.empty((n_rec, n_rep, n), dtype=np.int8)
    max_drift = 0.0
    swaps = np.zeros(max(n_rep - 1, 1), dtype=np.int64)

    for sweep in range(n_sweeps):
        for k in range(n_rep):
            r = slot_row[k]
            beta = betas[k]
            for i in range(n):
                de = -2.0 * s[r, i] * h[r, i]
                if de > 0.0:
                    if _uniform(seed, _PHASE_FLIP, k, sweep, i) >= math.exp(-beta * de):
                        continue
                s[r, i] = -s[r, i]
                two_si = 2.0 * s[r, i]
                for j in range(n):
                    h[r, j] += J[j, i] * two_si
                e[r] += de
                if e[r] < best_e:
                    best_e = e[r]
                    best_s[:] = s[r]
        for k in range(n_rep - 1):
            ra = slot_row[k]
            rb = slot_row[k + 1]
            x = (betas[k] - betas[k + 1]) * (e[ra] - e[rb])
            if x >= 0.0 or _uniform(seed, _PHASE_SWAP, k, sweep, 0) < math.exp(x):
                slot_row[k] = rb
                slot_row[k + 1] = ra
                swaps[k] += 1
        if record:
            for k in range(n_rep):
                r = slot_row[k]
                trace_e[sweep, k] = e[r]
                trace_s[sweep, k, :] = s[r]
        if check_every > 0 and (sweep + 1) % check_every == 0:
            fresh = _energy_rows(f, J, s)
            for r in range(n_rep):
                d = abs(fresh[r] - e[r])
                if d > max_drift:
                    max_drift = d
                e[r] = fresh[r]
            h = _fields(f, J, s)
    return best_s, best_e, max_drift, swaps, trace_e, trace_s


@dataclass(frozen=True, eq=False)
class PtConfig:
    """Parallel tempering settings.

    ``beta_ladder=None`` resolves to the default geometric ladder of
    ``n_replicas`` temperatures scaled to the model. ``initial_state=None``
    means independent random initialization of every replica; otherwise all
    replicas start from that state.
    """

    n_replicas: int = 8
    beta_ladder: tuple[float, ...] | None = None
    n_sweeps: int = 50
    rng_seed: int = 0
    initial_state: np.ndarray | None = None
    record_trace: bool = False

    def __post_init__(self):
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")
        if self.beta_ladder is not None:
            b = np.asarray(self.beta_ladder, dtype=float)
            if b.ndim != 1 or len(b) != self.n_replicas:
                raise ValueError("beta_ladder length must equal n_replicas")
            if np.any(b <= 0) or np.any(np.diff(b) <= 0):
                raise ValueError("betas must be positive and strictly increasing")
            object.__setattr__(self, "beta_ladder", tuple(float(x) for x in b))
        if self.initial_state is not None:
            object.__setattr__(self, "initial_state", check_spins(self.initial_state))

    @property
    def seeded(self) -> bool:
        return self.initial_state is not None

    def with_(self, **changes) -> "PtConfig":
        kw = {k: getattr(self, k) for k in
              ("n_replicas", "beta_ladder", "n_sweeps", "rng_seed", "initial_state", "record_trace")}
        kw.update(changes)
        return PtConfig(**kw)


def default_beta_ladder(model: IsingModel, n_replicas: int = 8,
                        low: float = 0.1, high: float = 10.0) -> np.ndarray:
    """Geometric ladder from ``low/<|g|>`` to ``high/<|g|>``."""
    scale = model.mean_abs_coupling
    if not scale > 0:
        scale = float(np.mean(np.abs(model.f))) if model.n_v else 0.0
    if not scale > 0:
        scale = 1.0
    if n_replicas == 1:
        return np.array([high / scale])
    return np.geomspace(low / scale, high / scale, n_replicas)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Collected ``(state, energy)`` samples; energies include the offset."""

    states: list
    energies: np.ndarray
    max_drift: float = 0.0
    swap_counts: np.ndarray | None = None
    trace_energies: np.ndarray | None = field(default=None, repr=False)
    trace_states: np.ndarray | None = field(default=None, repr=False)

    @property
    def samples(self) -> list[tuple[np.ndarray, float]]:
        return list(zip(self.states, self.energies.tolist()))

    @property
    def best(self) -> int:
        return int(np.argmin(self.energies))

    @property
    def best_state(self) -> np.ndarray:
        return self.states[self.best]

    @property
    def best_energy(self) -> float:
        return float(self.energies[self.best])

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def pool(cls, sets) -> "SampleSet":
        sets = list(sets)
        states = [s for ss in sets for s in ss.states]
        energies = np.concatenate([ss.energies for ss in sets]) if sets else np.empty(0)
        return cls(states, energies, max((ss.max_drift for ss in sets), default=0.0))


def pt_solve(model: IsingModel, cfg: PtConfig) -> SampleSet:
    """Run one parallel tempering solve and return its best-ever sample."""
    n = model.n_v
    betas = np.asarray(cfg.beta_ladder if cfg.beta_ladder is not None
                       else default_beta_ladder(model, cfg.n_replicas), dtype=float)
    if cfg.seeded:
        init = check_spins(cfg.initial_state, n)
    else:
        init = np.ones(n, dtype=np.int8)
    seed = np.uint64(int(cfg.rng_seed) & 0xFFFFFFFFFFFFFFFF)
    best_s, best_e, drift, swaps, te, ts = _pt_kernel(
        model.f, model.J, betas, init, not cfg.seeded, cfg.n_sweeps, seed,
        CHECK_EVERY, cfg.record_trace,
    )
    if drift > DRIFT_TOL:
        raise FloatingPointError(f"incremental energy drifted by {drift:g}")
    energy = float(best_e) + model.offset
    return SampleSet(
        [best_s.copy()], np.array([energy]), float(drift), swaps,
        te + model.offset if cfg.record_trace else None,
        ts if cfg.record_trace else None,
    )


def delta_energy(model: IsingModel, s, flip_index: int) -> float:
    """``energy(flip(s, i)) - energy(s)`` in O(n) time."""
    s = check_spins(s, model.n_v)
    i = int(flip_index)
    if not 0 <= i < model.n_v:
        raise IndexError(f"flip index {flip_index} out of range for {model.n_v} spins")
    local = model.f[i] + model.J[i] @ s
    return float(-2.0 * s[i] * local)
