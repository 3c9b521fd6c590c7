"""Scenario sweeps: deterministic instance generation, paired detector runs,
metric aggregation and result files."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .ensemble import DetectorConfig, Strategy, detect
from .metrics import (DEFAULT_PACKET_BITS, ML_TOL, XRESQ_SCHEDULE, BerRecord, compute_budget,
                      packet_counts, records_from_json, records_to_csv, records_to_json)
from .model import ChannelSpec, Constellation, generate_instance
from .oracle import EnumerationBudgetExceeded, brute_force_ml
from .pt import PtConfig

log = logging.getLogger(__name__)

WORKERS_ENV = "RESQLAB_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    n_t: list = field(default_factory=lambda: [4])
    n_r: list = field(default_factory=lambda: [4])
    modulation: list = field(default_factory=lambda: ["QPSK"])
    snr_db: list = field(default_factory=lambda: [20.0])
    detectors: list = field(default_factory=lambda: ["mmse"])
    l_p: list = field(default_factory=lambda: [1])
    instances_per_point: int = 100
    n_sweeps: int = 50
    n_replicas: int = 8
    master_seed: int = 0
    output_dir: str = "results"
    packet_bits: int = DEFAULT_PACKET_BITS
    channel: str = "iid"
    channel_seed: int = 0
    ml_budget: int = 2 ** 16
    oracle_cache: str | None = None

    GRID_KEYS = ("n_t", "n_r", "modulation", "snr_db", "detectors", "l_p")

    def __post_init__(self):
        for k in self.GRID_KEYS:
            v = getattr(self, k)
            if not isinstance(v, (list, tuple)):
                v = [v]
            if not v:
                raise ConfigError(f"grid list {k!r} must be nonempty")
            setattr(self, k, list(v))
        self.n_t = [int(x) for x in self.n_t]
        self.n_r = [int(x) for x in self.n_r]
        self.snr_db = [float(x) for x in self.snr_db]
        self.l_p = [int(x) for x in self.l_p]
        self.modulation = [str(Constellation.from_name(m)) for m in self.modulation]
        for d in self.detectors:
            parse_detector(d)
        if self.instances_per_point < 1:
            raise ConfigError("instances_per_point must be >= 1")
        if any(x < 1 for x in self.l_p):
            raise ConfigError("l_p values must be >= 1")
        if self.n_sweeps < 1 or self.n_replicas < 1:
            raise ConfigError("n_sweeps and n_replicas must be >= 1")
        if self.packet_bits < 1:
            raise ConfigError("packet_bits must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        flat = _flatten(data)
        unknown = sorted(set(flat) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**flat)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def points(self) -> list[tuple]:
        return [p for p in itertools.product(self.n_t, self.n_r, self.modulation, self.snr_db) if p[1] >= p[0]]


def _flatten(data: dict) -> dict:
    """Merge TOML sections into one flat namespace; manifests nest the config
    under ``config``."""
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    out = {}
    for k, v in data.items():
        if isinstance(v, dict):
            out.update(_flatten(v))
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read a TOML config (or a run manifest) and apply ``key=value``
    overrides; overrides win over the file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    if path.suffix == ".json":
        data = json.loads(raw)
    else:
        try:
            data = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    data = _flatten(data)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        k, v = ov.split("=", 1)
        data[k.strip().split(".")[-1]] = _parse_value(v.strip())
    return ExperimentConfig.from_mapping(data)


# ---------------------------------------------------------------- runs

@dataclass(frozen=True)
class Run:
    detector: str
    strategy: Strategy
    l_p: int
    n_fs: int | None = None


def parse_detector(name: str) -> tuple[Strategy, int | None]:
    """``"iotresq:1"`` pins the expansion depth; other names map to a strategy."""
    base, _, arg = str(name).partition(":")
    st = Strategy.parse(base)
    if arg:
        if st is not Strategy.IOTRESQ:
            raise ConfigError(f"only iotresq takes a parameter, got {name!r}")
        return st, int(arg)
    return st, None


def expand_runs(cfg: ExperimentConfig, modulation: str, n_t: int) -> tuple[list[Run], list[str]]:
    size = Constellation.from_name(modulation).size
    runs, notes = [], []
    for d in cfg.detectors:
        st, n_fs = parse_detector(d)
        label = st.value if n_fs is None else f"{st.value}:{n_fs}"
        if st is Strategy.IOTRESQ:
            if n_fs is not None:
                runs.append(Run(label, st, size ** n_fs, n_fs))
                continue
            hit = False
            for lp in cfg.l_p:
                k = round(math.log(lp, size)) if lp > 1 else 0
                if size ** k == lp and k <= n_t:
                    runs.append(Run(label, st, lp, k))
                    hit = True
            if not hit:
                notes.append(f"iotresq: no l_p in {cfg.l_p} is a power of |O|={size}")
        elif st.parallel:
            runs.extend(Run(label, st, lp) for lp in cfg.l_p)
        else:
            runs.append(Run(label, st, 1))
    return runs, notes


def instance_seed(master_seed: int, point: tuple, index: int) -> int:
    n_t, n_r, mod, snr = point
    key = f"{master_seed}|{n_t}|{n_r}|{mod}|{snr!r}|{index}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _channel_spec(cfg: ExperimentConfig) -> ChannelSpec:
    if cfg.channel in ("iid", "", None):
        return ChannelSpec.iid(cfg.channel_seed)
    return ChannelSpec.trace(cfg.channel, cfg.channel_seed)


def _load_oracle(path) -> dict:
    if path and os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    return {}


@dataclass
class InstanceOutcome:
    digest: str
    bits_per_user: int
    errors: dict        # run key -> bool array (n_t, M)
    residual: dict      # run key -> float
    violations: dict    # run key -> 0/1
    solve_s: dict       # run key -> seconds
    ml_obj: float | None


def _run_instance(cfg: ExperimentConfig, point: tuple, index: int, runs: list, oracle: dict) -> InstanceOutcome:
    n_t, n_r, mod, snr = point
    inst = generate_instance(_channel_spec(cfg), n_t, n_r, mod, snr, instance_seed(cfg.master_seed, point, index))
    m = inst.constellation.bits_per_symbol
    pt = PtConfig(n_replicas=cfg.n_replicas, n_sweeps=cfg.n_sweeps)
    errors, residual, violations, solve_s = {}, {}, {}, {}
    ml_obj = oracle.get(inst.digest)
    for run in runs:
        key = (run.detector, run.l_p)
        dcfg = DetectorConfig(run.strategy, run.l_p, run.n_fs, pt, rng_seed=cfg.master_seed)
        t0 = time.perf_counter()
        res = detect(inst, dcfg, budget=cfg.ml_budget)
        solve_s[key] = time.perf_counter() - t0
        errors[key] = (res.bits != inst.bits_true).reshape(n_t, m)
        residual[key] = res.energy
        violations[key] = int(res.reference_energy is not None and res.energy > res.reference_energy)
        if run.strategy is Strategy.BRUTE_FORCE:
            ml_obj = res.energy
    if ml_obj is None:
        try:
            ml_obj = brute_force_ml(inst, cfg.ml_budget)[1]
        except EnumerationBudgetExceeded:
            ml_obj = None
    return InstanceOutcome(inst.digest, m, errors, residual, violations, solve_s, ml_obj)


def _run_chunk(args):
    cfg_dict, point, indices, runs, oracle = args
    cfg = ExperimentConfig(**cfg_dict)
    return [_run_instance(cfg, point, i, runs, oracle) for i in indices]


def _aggregate(cfg, point, runs, outcomes) -> list[BerRecord]:
    n_t, n_r, mod, snr = point
    h = hashlib.sha256()
    for o in outcomes:
        h.update(o.digest.encode())
    digest = h.hexdigest()[:16]
    records = []
    for run in runs:
        key = (run.detector, run.l_p)
        rec = BerRecord(n_t, n_r, mod, snr, run.detector, run.l_p, n_sweeps=cfg.n_sweeps,
                        instance_digest=digest)
        streams = np.concatenate([o.errors[key] for o in outcomes], axis=1)
        rec.instances = len(outcomes)
        rec.bits_tested = int(streams.size)
        rec.bit_errors = int(np.count_nonzero(streams))
        rec.packets_ok, rec.packets = packet_counts(streams, cfg.packet_bits)
        rec.anti_regression_violations = sum(o.violations[key] for o in outcomes)
        for o in outcomes:
            # best-known objective when the oracle is out of budget
            ref = o.ml_obj if o.ml_obj is not None else min(o.residual.values())
            rec.ml_known += 1
            rec.ml_hits += int(o.residual[key] <= ref + ML_TOL)
            rec.energy_gap_sum += o.residual[key] - ref
        records.append(rec)
    return records


def _replicate_baselines(cfg, records: list[BerRecord], runs: list[Run]) -> list[BerRecord]:
    """Give single-task detectors a row at every grid l_p (same numbers)."""
    out = []
    single = {r.detector for r in runs if not r.strategy.parallel}
    for rec in records:
        if rec.detector in single:
            for lp in cfg.l_p:
                out.append(BerRecord(**{**asdict(rec), "l_p": lp}))
        else:
            out.append(rec)
    return out


@dataclass
class RunSummary:
    records: list
    failures: list
    paths: dict
    manifest: dict

    @property
    def exit_code(self) -> int:
        return 2 if self.failures else 0


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _execute(cfg, point, runs, oracle, workers):
    n = cfg.instances_per_point
    if workers <= 1:
        return [_run_instance(cfg, point, i, runs, oracle) for i in range(n)]
    chunk = max(1, math.ceil(n / (workers * 4)))
    jobs = [(cfg.to_dict(), point, list(range(s, min(n, s + chunk))), runs, oracle)
            for s in range(0, n, chunk)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_run_chunk, jobs))
    return [o for part in parts for o in part]


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, write: bool = True) -> RunSummary:
    """Run every grid point; failures are recorded per point and the sweep
    continues."""
    workers = resolve_workers(workers)
    oracle_path = cfg.oracle_cache or os.path.join(cfg.output_dir, "oracle.json")
    oracle = _load_oracle(oracle_path)
    points = cfg.points()
    if not points:
        raise ConfigError("grid has no valid point (need n_r >= n_t)")
    t_start = time.perf_counter()
    records, failures, timing = [], [], []
    for point in points:
        t0 = time.perf_counter()
        try:
            runs, notes = expand_runs(cfg, point[2], point[0])
            failures.extend({"point": list(point), "error": n} for n in notes)
            if not runs:
                continue
            outcomes = _execute(cfg, point, runs, oracle, workers)
            recs = _aggregate(cfg, point, runs, outcomes)
            for run in runs:
                key = (run.detector, run.l_p)
                timing.append({"point": list(point), "detector": run.detector, "l_p": run.l_p,
                               "mean_solve_s": float(np.mean([o.solve_s[key] for o in outcomes]))})
            records.extend(_replicate_baselines(cfg, recs, runs))
        except Exception as exc:  # fail-soft: one bad point must not sink the sweep
            log.exception("grid point %s failed", point)
            failures.append({"point": list(point), "error": f"{type(exc).__name__}: {exc}"})
        log.info("point %s done in %.1fs", point, time.perf_counter() - t0)

    manifest = {
        "config": cfg.to_dict(),
        "versions": _versions(),
        "workers": workers,
        "oracle_cache": oracle_path if oracle else None,
        "wall_time_s": time.perf_counter() - t_start,
        "timing": timing,
        "failures": failures,
    }
    paths = {}
    if write:
        paths = write_results(cfg.output_dir, records, manifest)
    return RunSummary(records, failures, paths, manifest)


def _versions() -> dict:
    import numba
    return {"resqlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__}


def write_results(output_dir, records, manifest) -> dict:
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "results.csv", "json": out / "results.json", "manifest": out / "manifest.json"}
        paths["csv"].write_text(records_to_csv(records))
        paths["json"].write_text(records_to_json(records) + "\n")
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write results to {out}: {exc.strerror}") from exc
    return {k: str(v) for k, v in paths.items()}


def run_oracle(cfg: ExperimentConfig, budget: int | None = None) -> str:
    """Brute-force ML objectives for every instance of the sweep, cached by
    instance digest."""
    budget = budget or max(cfg.ml_budget, 2 ** 24)
    path = cfg.oracle_cache or os.path.join(cfg.output_dir, "oracle.json")
    cache = _load_oracle(path)
    spec = _channel_spec(cfg)
    for point in cfg.points():
        n_t, n_r, mod, snr = point
        for i in range(cfg.instances_per_point):
            inst = generate_instance(spec, n_t, n_r, mod, snr, instance_seed(cfg.master_seed, point, i))
            if inst.digest in cache:
                continue
            try:
                cache[inst.digest] = brute_force_ml(inst, budget)[1]
            except EnumerationBudgetExceeded:
                log.warning("point %s exceeds the oracle budget; skipped", point)
                break
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(cache, fh, indent=1, sort_keys=True)
    return path


# ---------------------------------------------------------------- curves

AXES = {"snr": "snr_db", "lp": "l_p", "l_p": "l_p", "time": "pseudo_time_us"}

CURVE_COLUMNS = ["detector", "axis", "value", "bits_tested", "bit_errors", "ber", "packet_rate",
                 "ml_hit_rate", "mean_energy_gap"]


def pseudo_time_us(l_p: int, n_sweeps: int) -> float:
    """Classical stand-in for compute time: each PT sweep of each task is
    charged as one anneal of the seeded schedule (2.2 us)."""
    return compute_budget(XRESQ_SCHEDULE, max(1, l_p * n_sweeps))


def emit_curve_data(records, axis: str, timing=None) -> str:
    """Long-format CSV, one row per ``(detector, axis value)``; records that
    share both are pooled."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; choose snr, lp or time")
    records = list(records)
    if not records:
        raise ValueError("no results to emit")
    groups: dict = {}
    for r in records:
        if axis == "snr":
            val = r.snr_db
        elif axis in ("lp", "l_p"):
            val = r.l_p
        else:
            val = pseudo_time_us(r.l_p, r.n_sweeps)
        g = groups.setdefault((r.detector, val), [0, 0, 0, 0, 0, 0, 0.0, []])
        g[0] += r.bits_tested
        g[1] += r.bit_errors
        g[2] += r.packets
        g[3] += r.packets_ok
        g[4] += r.ml_known
        g[5] += r.ml_hits
        g[6] += r.energy_gap_sum
        g[7].append(r)
    wall = {}
    for t in timing or []:
        wall.setdefault((t["detector"], t["l_p"]), []).append(t["mean_solve_s"])
    cols = CURVE_COLUMNS + (["l_p", "wall_time_s"] if axis == "time" else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for (det, val), g in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        nan = float("nan")
        row = [det, AXES[axis], repr(float(val)) if isinstance(val, float) else val, g[0], g[1],
               repr(g[1] / g[0]) if g[0] else "nan",
               repr(g[3] / g[2]) if g[2] else "nan",
               repr(g[5] / g[4]) if g[4] else "nan",
               repr(g[6] / g[4]) if g[4] else "nan"]
        if axis == "time":
            lps = sorted({r.l_p for r in g[7]})
            ws = [x for lp in lps for x in wall.get((det, lp), [])]
            row += ["|".join(map(str, lps)), repr(float(np.mean(ws))) if ws else repr(nan)]
        w.writerow(row)
    return buf.getvalue()


def load_results(path) -> tuple[list[BerRecord], list]:
    """Records from ``results.json`` plus timing from a sibling manifest."""
    path = Path(path)
    records = records_from_json(path.read_text())
    manifest = path.with_name("manifest.json")
    timing = json.loads(manifest.read_text()).get("timing", []) if manifest.exists() else []
    return records, timing
