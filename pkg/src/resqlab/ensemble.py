"""Detector orchestration: X-ResQ multi-seed ensembles, IoT-ResQ
decomposition, ParaMax-style random-init parallelism and final filtering."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .ising import (SpinMapping, build_ml_ising, build_split_forms,
                    check_spins, reassemble_split, reduce_ising, split_seed)
from .linear import detect_mmse, detect_zf
from .model import Constellation, DetectionInstance
from .oracle import DEFAULT_BUDGET, FsdPlan, brute_force_ml, fsd_detect
from .pt import PtConfig, pt_solve


class Strategy(str, enum.Enum):
    XRESQ = "xresq"
    XRESQ_SPLIT = "xresq-split"
    IOTRESQ = "iotresq"
    PARAMAX = "paramax"
    MMSE = "mmse"
    ZF = "zf"
    BRUTE_FORCE = "ml"

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, Strategy):
            return name
        key = "".join(ch for ch in str(name).lower() if ch.isalnum())
        try:
            return _STRATEGY_KEYS[key]
        except KeyError:
            raise ValueError(f"unknown detector strategy {name!r}") from None

    @property
    def parallel(self) -> bool:
        return self in (Strategy.XRESQ, Strategy.XRESQ_SPLIT, Strategy.IOTRESQ, Strategy.PARAMAX)


_STRATEGY_KEYS = {
    "xresq": Strategy.XRESQ, "xresqsplit": Strategy.XRESQ_SPLIT, "iotresq": Strategy.IOTRESQ,
    "paramax": Strategy.PARAMAX, "mmse": Strategy.MMSE, "mmseonly": Strategy.MMSE,
    "zf": Strategy.ZF, "zfonly": Strategy.ZF, "ml": Strategy.BRUTE_FORCE,
    "bruteforce": Strategy.BRUTE_FORCE,
}

# task-index slots for the BMG draws, kept clear of real task indices
_BMG_SLOT = 2**32
_SPLIT_BMG_SLOT = 2**32 + 1


@dataclass(frozen=True)
class DetectorConfig:
    """Which detector to run and how wide.

    For IoT-ResQ the level of parallelism is fixed by the expansion depth:
    ``l_p = |O| ** n_fs``. Pass ``modulation`` to have that checked here;
    otherwise it is checked when the detector runs.
    """

    strategy: Strategy = Strategy.XRESQ
    l_p: int | None = 1
    n_fs: int | None = None
    pt: PtConfig = field(default_factory=PtConfig)
    rng_seed: int = 0
    modulation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.strategy is Strategy.IOTRESQ:
            if self.n_fs is None or self.n_fs < 0:
                raise ValueError("IoT-ResQ needs n_fs >= 0")
            if self.modulation is not None:
                need = Constellation.from_name(self.modulation).size ** self.n_fs
                if self.l_p is None:
                    object.__setattr__(self, "l_p", need)
                elif self.l_p != need:
                    raise ValueError(f"IoT-ResQ with n_fs={self.n_fs} requires l_p={need}, got {self.l_p}")
        elif self.l_p is None:
            object.__setattr__(self, "l_p", 1)
        if self.l_p is not None and self.l_p < 1:
            raise ValueError("l_p must be >= 1")


@dataclass(frozen=True, eq=False)
class TaskSummary:
    index: int
    kind: str
    seed: int
    model_energy: float
    state: np.ndarray
    candidates: list
    residuals: list


@dataclass(frozen=True, eq=False)
class DetectionResult:
    strategy: Strategy
    v_hat: np.ndarray
    bits: np.ndarray
    energy: float
    per_task: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    pool_energies: np.ndarray | None = None
    reference_energy: float | None = None


def task_seed(rng_seed: int, instance_id: int, task_index: int) -> int:
    ss = np.random.SeedSequence([int(rng_seed) & (2**64 - 1), int(instance_id) & (2**64 - 1),
                                 int(task_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def bmg_generate(seed_state, l_p: int, rng_seed: int) -> list[np.ndarray]:
    """Seed list: the unmodified state, then ``l_p - 1`` single-spin flips at
    distinct random indices."""
    s = check_spins(seed_state)
    n = s.shape[0]
    if l_p < 1:
        raise ValueError("l_p must be >= 1")
    if l_p > n + 1:
        raise ValueError(f"cannot draw {l_p} distinct seeds from {n} spins (max {n + 1})")
    rng = np.random.default_rng(int(rng_seed) & (2**64 - 1))
    flips = rng.choice(n, size=l_p - 1, replace=False) if l_p > 1 else []
    out = [s.copy()]
    for i in flips:
        t = s.copy()
        t[i] = -t[i]
        out.append(t)
    return out


def _bits(v: np.ndarray, c: Constellation) -> np.ndarray:
    return SpinMapping.to_bits(SpinMapping(len(v), c).from_symbols(v))


def _finish(strategy, inst, candidates, tasks, timing, reference=None) -> DetectionResult:
    residuals = np.array([inst.residual(v) for v in candidates])
    k = int(np.argmin(residuals))
    v = candidates[k]
    return DetectionResult(strategy, v, _bits(v, inst.constellation), float(residuals[k]),
                           tasks, timing, residuals, reference)


def _run_task(inst, model, seed_state, cfg: DetectorConfig, index: int, kind: str,
              decode) -> TaskSummary:
    seed = task_seed(cfg.rng_seed, inst.instance_id, index)
    pt_cfg = cfg.pt.with_(rng_seed=seed, initial_state=seed_state)
    ss = pt_solve(model, pt_cfg)
    cands = decode(ss.best_state)
    return TaskSummary(index, kind, seed, ss.best_energy, ss.best_state, cands,
                       [inst.residual(v) for v in cands])


def detect_xresq(inst: DetectionInstance, cfg: DetectorConfig) -> DetectionResult:
    """MMSE seed -> ML Ising -> BMG seeds -> parallel seeded PT -> filter.

    With the split strategy, ``ceil(l_p / 2)`` tasks solve the split-detection
    form instead; their samples are reassembled into full symbol vectors
    before filtering. The MMSE solution always competes in the final pool.
    Single-layer constellations run the split strategy as plain X-ResQ.
    """
    if cfg.strategy not in (Strategy.XRESQ, Strategy.XRESQ_SPLIT):
        raise ValueError(f"detect_xresq cannot run strategy {cfg.strategy.value}")
    t0 = time.perf_counter()
    mmse = detect_mmse(inst)
    model = build_ml_ising(inst)
    # BPSK/QPSK have a single layer: nothing to split, so every task stays on the ML form
    splittable = cfg.strategy is Strategy.XRESQ_SPLIT and inst.constellation.n_q >= 2
    n_split = math.ceil(cfg.l_p / 2) if splittable else 0
    n_base = cfg.l_p - n_split
    seeds = bmg_generate(mmse.spins, n_base, task_seed(cfg.rng_seed, inst.instance_id, _BMG_SLOT)) if n_base else []
    jobs = [(model, s, "ml", model.decode) for s in seeds]
    if n_split:
        split = build_split_forms(inst, mmse.v_hard)
        sseeds = bmg_generate(split_seed(mmse.v_hard, inst.constellation), n_split,
                              task_seed(cfg.rng_seed, inst.instance_id, _SPLIT_BMG_SLOT))

        def decode_split(s, split=split):
            return [reassemble_split(split, s)] + split.decode(s)

        jobs += [(split, s, "split", decode_split) for s in sseeds]
    t1 = time.perf_counter()
    tasks = [_run_task(inst, m, s, cfg, i, kind, dec) for i, (m, s, kind, dec) in enumerate(jobs)]
    t2 = time.perf_counter()
    candidates = [mmse.v_hard] + [v for t in tasks for v in t.candidates]
    return _finish(cfg.strategy, inst, candidates, tasks,
                   {"preprocess_s": t1 - t0, "solve_s": t2 - t1}, inst.residual(mmse.v_hard))


def detect_paramax(inst: DetectionInstance, cfg: DetectorConfig) -> DetectionResult:
    """``l_p`` independent randomly initialized PT solves of the ML model."""
    if cfg.strategy is not Strategy.PARAMAX:
        raise ValueError(f"detect_paramax cannot run strategy {cfg.strategy.value}")
    t0 = time.perf_counter()
    model = build_ml_ising(inst)
    t1 = time.perf_counter()
    tasks = [_run_task(inst, model, None, cfg, i, "random", model.decode) for i in range(cfg.l_p)]
    t2 = time.perf_counter()
    candidates = [v for t in tasks for v in t.candidates]
    return _finish(cfg.strategy, inst, candidates, tasks, {"preprocess_s": t1 - t0, "solve_s": t2 - t1})


def detect_iotresq(inst: DetectionInstance, cfg: DetectorConfig) -> DetectionResult:
    """FSD full expansion; each branch's reduced model is solved by PT seeded
    with that branch's greedy completion."""
    if cfg.strategy is not Strategy.IOTRESQ:
        raise ValueError(f"detect_iotresq cannot run strategy {cfg.strategy.value}")
    c = inst.constellation
    need = c.size ** cfg.n_fs
    if cfg.l_p is not None and cfg.l_p != need:
        raise ValueError(f"IoT-ResQ with n_fs={cfg.n_fs} requires l_p={need}, got {cfg.l_p}")
    if cfg.n_fs > inst.n_t:
        raise ValueError(f"n_fs={cfg.n_fs} exceeds the user count {inst.n_t}")
    t0 = time.perf_counter()
    plan = FsdPlan.for_instance(inst, cfg.n_fs)
    fsd = fsd_detect(inst, plan)
    model = build_ml_ising(inst)
    mapping = model.mapping
    m = c.bits_per_symbol
    exp_spin_idx = [m * u + k for u in plan.expanded for k in range(m)]
    t1 = time.perf_counter()
    tasks = []
    for br in fsd.branches:
        full = mapping.from_symbols(br.v)
        fixed = {i: int(full[i]) for i in exp_spin_idx}
        reduced = reduce_ising(model, fixed)
        seed_state = full[reduced.reduction.free] if reduced.reduction is not None else full
        tasks.append(_run_task(inst, reduced, seed_state, cfg, br.index, "branch", reduced.decode))
    t2 = time.perf_counter()
    candidates = [br.v for br in fsd.branches] + [v for t in tasks for v in t.candidates]
    return _finish(cfg.strategy, inst, candidates, tasks,
                   {"preprocess_s": t1 - t0, "solve_s": t2 - t1}, fsd.best.objective)


def detect(inst: DetectionInstance, cfg: DetectorConfig, budget: int = DEFAULT_BUDGET) -> DetectionResult:
    """Run any strategy; linear and brute-force detectors share the result type."""
    st = cfg.strategy
    if st in (Strategy.XRESQ, Strategy.XRESQ_SPLIT):
        return detect_xresq(inst, cfg)
    if st is Strategy.PARAMAX:
        return detect_paramax(inst, cfg)
    if st is Strategy.IOTRESQ:
        return detect_iotresq(inst, cfg)
    t0 = time.perf_counter()
    if st is Strategy.MMSE:
        v = detect_mmse(inst).v_hard
    elif st is Strategy.ZF:
        v = detect_zf(inst).v_hard
    else:
        v, _ = brute_force_ml(inst, budget)
    return _finish(st, inst, [v], [], {"preprocess_s": 0.0, "solve_s": time.perf_counter() - t0})
