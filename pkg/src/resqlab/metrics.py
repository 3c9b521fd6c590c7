"""Evaluation: BER, TTS, optimum probability, ML occurrence, packet success,
compute budgets and split-detection noise diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, fields
from decimal import Decimal

import numpy as np

from .ising import split_layers

DEFAULT_PACKET_BITS = 12000
ML_TOL = 1e-6
TARGET_CONFIDENCE = 0.99


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True)
class AnnealSchedule:
    """Piecewise-linear anneal schedule as ``(time_us, tau)`` points."""

    points: tuple[tuple[float, float], ...]
    name: str = ""

    def __post_init__(self):
        pts = tuple((float(t), float(tau)) for t, tau in self.points)
        if len(pts) < 2:
            raise ValueError("schedule needs at least two points")
        times = [t for t, _ in pts]
        if times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must start at 0 and strictly increase")
        if any(not 0.0 <= tau <= 1.0 for _, tau in pts):
            raise ValueError("tau values must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def total_time(self) -> float:
        return self.points[-1][0]

    @property
    def pauses(self) -> list[tuple[float, float, float]]:
        """``(start, stop, tau)`` for every constant-tau segment."""
        return [(a[0], b[0], a[1]) for a, b in zip(self.points, self.points[1:]) if a[1] == b[1]]

    @property
    def switching_point(self) -> float | None:
        p = self.pauses
        return p[0][2] if p else None

    @property
    def reverse(self) -> bool:
        return self.points[0][1] == 1.0


QUAMAX_SCHEDULE = AnnealSchedule(((0.0, 0.0), (0.3, 0.3), (1.3, 0.3), (2.0, 1.0)), "quamax")
XRESQ_SCHEDULE = AnnealSchedule(((0.0, 1.0), (0.6, 0.4), (1.6, 0.4), (2.2, 1.0)), "xresq")


def compute_budget(schedule: AnnealSchedule, n_a: int) -> float:
    """``n_a * T_a`` in microseconds, exact in decimal."""
    if n_a < 1:
        raise ValueError("n_a must be >= 1")
    return float(Decimal(repr(schedule.total_time)) * int(n_a))


# ---------------------------------------------------------------- formulas

def tts(p_g: float, t_a_us: float, target: float = TARGET_CONFIDENCE) -> float:
    """Time to solution at ``target`` confidence; at least one run is charged."""
    if not 0.0 <= p_g <= 1.0:
        raise ValueError("p_g must lie in [0, 1]")
    if not t_a_us > 0:
        raise ValueError("t_a_us must be positive")
    if p_g == 0.0:
        return math.inf
    if p_g == 1.0:
        return float(t_a_us)
    runs = math.log(1 - target) / math.log(1 - p_g)
    return float(t_a_us) * max(runs, 1.0)


def optimum_probability(p_g: float, count: int) -> float:
    if not 0.0 <= p_g <= 1.0:
        raise ValueError("p_g must lie in [0, 1]")
    if count < 0:
        raise ValueError("count must be >= 0")
    return 1.0 - (1.0 - p_g) ** count


def ber(bits_true, bits_detected) -> tuple[int, int, float]:
    a = np.asarray(bits_true).reshape(-1)
    b = np.asarray(bits_detected).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"bit vectors differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("no bits to compare")
    errors = int(np.count_nonzero(a != b))
    return errors, a.size, errors / a.size


def ml_occurrence(samples, ml_energy: float, tol: float = ML_TOL) -> tuple[int, int]:
    """Count samples within ``tol`` of the ML energy.

    ``samples`` may be a SampleSet, an iterable of SampleSets, an iterable of
    ``(state, energy)`` pairs or a plain array of energies.
    """
    energies = _energies(samples)
    hits = int(np.count_nonzero(np.abs(energies - ml_energy) <= tol))
    return hits, int(energies.size)


def _energies(samples) -> np.ndarray:
    if hasattr(samples, "energies"):
        return np.asarray(samples.energies, dtype=float)
    out = []
    for item in samples:
        if hasattr(item, "energies"):
            out.extend(np.asarray(item.energies, dtype=float).tolist())
        elif isinstance(item, tuple):
            out.append(float(item[1]))
        else:
            out.append(float(item))
    return np.asarray(out, dtype=float)


def packet_counts(errors, packet_bits: int = DEFAULT_PACKET_BITS) -> tuple[int, int]:
    """``(good_packets, packets)`` over per-user error streams.

    ``errors`` is a boolean array of shape ``(n_users, n_bits)`` (or a single
    stream). Windows are non-overlapping per user; trailing partial windows
    are dropped.
    """
    e = np.atleast_2d(np.asarray(errors, dtype=bool))
    per_user = e.shape[1] // packet_bits
    if per_user == 0:
        return 0, 0
    win = e[:, :per_user * packet_bits].reshape(e.shape[0], per_user, packet_bits)
    bad = win.any(axis=2)
    return int(bad.size - np.count_nonzero(bad)), int(bad.size)


def packet_success_rate(errors, packet_bits: int = DEFAULT_PACKET_BITS) -> float:
    good, total = packet_counts(errors, packet_bits)
    if total == 0:
        raise ValueError(f"error stream is shorter than one {packet_bits}-bit packet")
    return good / total


# ---------------------------------------------------------------- records

@dataclass
class BerRecord:
    """Aggregated outcome for one scenario. ``merge`` is associative."""

    n_t: int
    n_r: int
    modulation: str
    snr_db: float
    detector: str
    l_p: int
    n_sweeps: int = 0
    instances: int = 0
    bits_tested: int = 0
    bit_errors: int = 0
    packets: int = 0
    packets_ok: int = 0
    ml_known: int = 0
    ml_hits: int = 0
    energy_gap_sum: float = 0.0
    anti_regression_violations: int = 0
    instance_digest: str = ""

    KEY_FIELDS = ("n_t", "n_r", "modulation", "snr_db", "detector", "l_p")

    @property
    def key(self) -> tuple:
        return tuple(getattr(self, k) for k in self.KEY_FIELDS)

    @property
    def ber(self) -> float:
        if self.bits_tested <= 0:
            raise ValueError("record holds no tested bits")
        return self.bit_errors / self.bits_tested

    @property
    def packet_rate(self) -> float:
        return self.packets_ok / self.packets if self.packets else math.nan

    @property
    def ml_hit_rate(self) -> float:
        return self.ml_hits / self.ml_known if self.ml_known else math.nan

    @property
    def mean_energy_gap(self) -> float:
        return self.energy_gap_sum / self.ml_known if self.ml_known else math.nan

    def merge(self, other: "BerRecord") -> "BerRecord":
        if other.key != self.key:
            raise ValueError("cannot merge records of different scenarios")
        return BerRecord(
            *self.key, n_sweeps=self.n_sweeps,
            instances=self.instances + other.instances,
            bits_tested=self.bits_tested + other.bits_tested,
            bit_errors=self.bit_errors + other.bit_errors,
            packets=self.packets + other.packets,
            packets_ok=self.packets_ok + other.packets_ok,
            ml_known=self.ml_known + other.ml_known,
            ml_hits=self.ml_hits + other.ml_hits,
            energy_gap_sum=self.energy_gap_sum + other.energy_gap_sum,
            anti_regression_violations=self.anti_regression_violations + other.anti_regression_violations,
            instance_digest=self.instance_digest if self.instance_digest == other.instance_digest else "",
        )

    def row(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out.update(ber=self.ber, packet_rate=self.packet_rate, ml_hit_rate=self.ml_hit_rate,
                   mean_energy_gap=self.mean_energy_gap)
        return out


CSV_COLUMNS = [
    "n_t", "n_r", "modulation", "snr_db", "detector", "l_p", "n_sweeps", "instances",
    "bits_tested", "bit_errors", "ber", "packets", "packets_ok", "packet_rate",
    "ml_known", "ml_hits", "ml_hit_rate", "mean_energy_gap", "anti_regression_violations",
    "instance_digest",
]


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def records_to_json(records) -> str:
    """Nested ``{scenario: {snr_db: {detector: {l_p: metrics}}}}`` document."""
    doc: dict = {}
    for r in records:
        scen = f"{r.n_t}x{r.n_r}-{r.modulation}"
        node = doc.setdefault(scen, {}).setdefault(repr(float(r.snr_db)), {}).setdefault(r.detector, {})
        node[str(r.l_p)] = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                            for k, v in r.row().items()}
    return json.dumps(doc, indent=2, sort_keys=True)


def records_from_json(text: str) -> list[BerRecord]:
    doc = json.loads(text)
    names = {f.name for f in fields(BerRecord)}
    out = []
    for scen in doc.values():
        for by_snr in scen.values():
            for by_det in by_snr.values():
                for row in by_det.values():
                    out.append(BerRecord(**{k: v for k, v in row.items() if k in names}))
    return out


# ---------------------------------------------------------------- split diagnostics

@dataclass(frozen=True)
class SplitDeltaStats:
    snr_db: float
    symbols: int
    quadrant_wrong: int
    position_wrong: int
    both_wrong: int

    @property
    def p_quadrant(self) -> float:
        return self.quadrant_wrong / self.symbols

    @property
    def p_position(self) -> float:
        return self.position_wrong / self.symbols

    @property
    def p_both(self) -> float:
        return self.both_wrong / self.symbols


def _check_split_input(instances):
    for inst in instances:
        if inst.constellation.n_q < 2:
            raise ValueError(f"split diagnostics need square QAM of order >= 16, got {inst.constellation}")


def split_delta_stats(instances, mmse_symbols, ml_symbols=None) -> dict[float, SplitDeltaStats]:
    """How often the MMSE layers disagree with the ML layers, per SNR.

    The quadrant is the most significant layer; "position" is wrong when any
    lower layer differs. ``ml_symbols`` defaults to brute-force ML.
    """
    from .oracle import brute_force_ml

    instances = list(instances)
    _check_split_input(instances)
    mmse_symbols = list(mmse_symbols)
    if ml_symbols is None:
        ml_symbols = [brute_force_ml(inst)[0] for inst in instances]
    acc: dict = {}
    for inst, vm, vml in zip(instances, mmse_symbols, ml_symbols, strict=True):
        lm = split_layers(np.asarray(vm), inst.constellation)
        ll = split_layers(np.asarray(vml), inst.constellation)
        quad = lm[0] != ll[0]
        pos = np.any(lm[1:] != ll[1:], axis=0)
        c = acc.setdefault(float(inst.snr_db), [0, 0, 0, 0])
        c[0] += inst.n_t
        c[1] += int(np.count_nonzero(quad))
        c[2] += int(np.count_nonzero(pos))
        c[3] += int(np.count_nonzero(quad & pos))
    return {snr: SplitDeltaStats(snr, *c) for snr, c in sorted(acc.items())}


def naive_split_noise(noise_power: float, n: int) -> tuple[float, float]:
    """Effective noise when the undetected layer is treated as noise.

    Returns ``(quadrant_first, position_first)`` =
    ``(0.25 (sigma^2 + 2 N^2), sigma^2 + 8 N^2)`` with ``sigma^2 = E||n||^2``.
    """
    return 0.25 * (noise_power + 2 * n * n), noise_power + 8 * n * n


def hdelta_bound(p: float, n: int) -> float:
    """Closed-form bound on ``E||H delta||^2`` for ``P(Re delta != 0) = p^2``."""
    return 2 * p * (n * math.sqrt(6 * n + n * (n - 1)) + n ** 1.5 * (n - 1))


@dataclass(frozen=True)
class NoiseReport:
    snr_db: float
    instances: int
    noise_power: float
    hdelta_power: float
    effective_noise: float
    effective_noise_se: float
    bound: float
    naive_quadrant_first: float
    naive_position_first: float
    p_position_wrong: float
    analytic_hdelta_bound: float

    @property
    def bound_holds(self) -> bool:
        return self.effective_noise <= self.bound + 3 * self.effective_noise_se

    @property
    def naive_exceeds_split(self) -> bool:
        return self.naive_quadrant_first > self.effective_noise


def effective_noise_check(instances, mmse_symbols) -> dict[float, NoiseReport]:
    """Monte Carlo effective noise of the quadrant split problem, per SNR.

    With ``delta = q_pos_true - q_pos_mmse`` the quadrant sub-problem sees
    noise ``0.25 ||n + H delta||^2`` (16-QAM; higher orders scale by the
    squared quadrant weight and sum the lower-layer errors). The report compares its mean against
    the triangle/Cauchy-Schwarz bound built from the same sample moments and
    against the naive layer-as-noise alternatives.
    """
    instances = list(instances)
    _check_split_input(instances)
    groups: dict = {}
    for inst, vm in zip(instances, mmse_symbols, strict=True):
        if inst.n_t != inst.n_r:
            raise ValueError("effective noise analysis assumes N x N MIMO")
        if inst.noise is None or inst.v_true is None:
            raise ValueError("instances must retain their noise and ground truth")
        lt = split_layers(inst.v_true, inst.constellation)
        lm = split_layers(np.asarray(vm), inst.constellation)
        w = inst.constellation.layer_weights
        delta = sum(w[k] * (lt[k] - lm[k]) for k in range(1, len(w)))
        hd = inst.H @ delta
        scale = 1.0 / w[0] ** 2
        groups.setdefault(float(inst.snr_db), []).append((
            float(np.real(np.vdot(inst.noise, inst.noise))),
            float(np.real(np.vdot(hd, hd))),
            scale * float(np.real(np.vdot(inst.noise + hd, inst.noise + hd))),
            float(np.mean(np.real(delta) != 0)),
            inst.n_t,
            scale,
        ))
    out = {}
    for snr, rows in sorted(groups.items()):
        a = np.array([r[:4] for r in rows])
        n, scale = rows[0][4], rows[0][5]
        noise_p, hd_p = a[:, 0].mean(), a[:, 1].mean()
        eff = a[:, 2]
        se = float(eff.std(ddof=1) / math.sqrt(len(eff))) if len(eff) > 1 else 0.0
        bound = scale * (noise_p + hd_p + 2 * math.sqrt(noise_p) * math.sqrt(hd_p))
        nq, npos = naive_split_noise(noise_p, n)
        p_re = float(a[:, 3].mean())
        out[snr] = NoiseReport(snr, len(rows), float(noise_p), float(hd_p), float(eff.mean()), se,
                               float(bound), nq, npos, p_re, hdelta_bound(math.sqrt(p_re), n))
    return out
