"""MU-MIMO detection instances: constellations, channels, noise and received signals."""

from __future__ import annotations

import enum
import hashlib
import itertools
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class Modulation(str, enum.Enum):
    BPSK = "BPSK"
    QPSK = "QPSK"
    QAM16 = "QAM16"
    QAM64 = "QAM64"


_BITS = {Modulation.BPSK: 1, Modulation.QPSK: 2, Modulation.QAM16: 4, Modulation.QAM64: 6}

_ALIASES = {
    "bpsk": Modulation.BPSK,
    "qpsk": Modulation.QPSK,
    "4qam": Modulation.QPSK,
    "qam4": Modulation.QPSK,
    "16qam": Modulation.QAM16,
    "qam16": Modulation.QAM16,
    "16-qam": Modulation.QAM16,
    "64qam": Modulation.QAM64,
    "qam64": Modulation.QAM64,
    "64-qam": Modulation.QAM64,
}


@dataclass(frozen=True)
class Constellation:
    """Unnormalized odd-integer lattice constellation.

    Points are ordered by their spin pattern: point ``k`` is produced by the
    per-user spin vector whose bits ``(1 + s) / 2`` spell ``k`` in binary,
    most significant bit first. The spin layout inside a user block is
    ``[Re q_1 .. Re q_nq, Im q_1 .. Im q_nq]`` with layer 1 the most
    significant (for 16-QAM, ``v = 2 q_1 + q_2`` so q_1 is the quadrant).
    """

    name: Modulation

    @classmethod
    def from_name(cls, name: "str | Modulation | Constellation") -> "Constellation":
        if isinstance(name, Constellation):
            return name
        if isinstance(name, Modulation):
            return cls(name)
        key = str(name).strip().lower()
        if key in _ALIASES:
            return cls(_ALIASES[key])
        try:
            return cls(Modulation(str(name).upper()))
        except ValueError:
            raise ValueError(f"unknown modulation {name!r}") from None

    @property
    def bits_per_symbol(self) -> int:
        return _BITS[self.name]

    @property
    def size(self) -> int:
        return 2 ** self.bits_per_symbol

    @property
    def n_q(self) -> int:
        """Number of QPSK layers (0 for BPSK)."""
        return 0 if self.name is Modulation.BPSK else self.bits_per_symbol // 2

    @property
    def layer_weights(self) -> np.ndarray:
        """Weight of each QPSK layer, most significant first."""
        return 2.0 ** np.arange(self.n_q - 1, -1, -1)

    @cached_property
    def spin_patterns(self) -> np.ndarray:
        """All per-user spin vectors in point order, shape (|O|, M)."""
        m = self.bits_per_symbol
        return np.array(list(itertools.product((-1, 1), repeat=m)), dtype=np.int8)

    @cached_property
    def user_matrix(self) -> np.ndarray:
        """Complex row vector ``a`` with ``v = a @ s`` for one user's spins."""
        if self.name is Modulation.BPSK:
            return np.array([1.0 + 0j])
        w = self.layer_weights
        return np.concatenate([w + 0j, 1j * w])

    @cached_property
    def points(self) -> np.ndarray:
        return self.spin_patterns.astype(float) @ self.user_matrix

    @property
    def mean_energy(self) -> float:
        # integer lattice: sum squares exactly before dividing
        p = self.points
        return float(np.sum(p.real ** 2 + p.imag ** 2) / p.size)

    def __len__(self) -> int:
        return self.size

    def __str__(self) -> str:
        return self.name.value


class ChannelKind(str, enum.Enum):
    IID_GAUSSIAN = "iid"
    TRACE_FILE = "trace"


@dataclass(frozen=True)
class ChannelSpec:
    """Where channel matrices come from.

    ``rng_seed`` salts the channel draw; it is combined with the per-instance
    seed so that a sweep still gets a fresh channel for every instance.
    For trace files the record used is ``rng_seed_of_instance % count``.
    """

    kind: ChannelKind = ChannelKind.IID_GAUSSIAN
    path: str | None = None
    rng_seed: int = 0

    @classmethod
    def iid(cls, rng_seed: int = 0) -> "ChannelSpec":
        return cls(ChannelKind.IID_GAUSSIAN, None, rng_seed)

    @classmethod
    def trace(cls, path: str | os.PathLike, rng_seed: int = 0) -> "ChannelSpec":
        return cls(ChannelKind.TRACE_FILE, os.fspath(path), rng_seed)


@dataclass(frozen=True, eq=False)
class DetectionInstance:
    """One channel use. ``v_true``, ``bits_true`` and ``noise`` are absent for
    received-only data (e.g. when wrapping measurements for an estimator)."""

    H: np.ndarray
    y: np.ndarray
    constellation: Constellation
    snr_db: float = math.inf
    sigma2: float = 0.0
    v_true: np.ndarray | None = None
    bits_true: np.ndarray | None = None
    noise: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.H.ndim != 2:
            raise ValueError("H must be a 2-D matrix")
        n_r, n_t = self.H.shape
        if not n_r >= n_t >= 1:
            raise ValueError(f"need n_r >= n_t >= 1, got n_r={n_r}, n_t={n_t}")
        if self.y.shape != (n_r,):
            raise ValueError(f"y has shape {self.y.shape}, expected ({n_r},)")

    @property
    def n_t(self) -> int:
        return self.H.shape[1]

    @property
    def n_r(self) -> int:
        return self.H.shape[0]

    @property
    def n_v(self) -> int:
        return self.n_t * self.constellation.bits_per_symbol

    @property
    def snr_linear(self) -> float:
        if self.sigma2 == 0:
            return math.inf
        return self.n_t * self.constellation.mean_energy / self.sigma2

    def residual(self, v) -> float:
        r = self.y - self.H @ np.asarray(v)
        return float(np.real(np.vdot(r, r)))

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.H, dtype=np.complex128).tobytes())
        h.update(np.ascontiguousarray(self.y, dtype=np.complex128).tobytes())
        h.update(str(self.constellation).encode())
        return h.hexdigest()

    @property
    def instance_id(self) -> int:
        return int(self.digest[:16], 16)


class TraceError(ValueError):
    """Malformed, missing or mismatched channel-trace file."""

    def __init__(self, message, path=None, line=None, record=None):
        self.path = path
        self.line = line
        self.record = record
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


def sigma2_for_snr(snr_db: float, n_t: int, constellation: Constellation) -> float:
    """Complex noise variance per receive antenna for a per-antenna SNR."""
    if not snr_db < math.inf:
        return 0.0
    return n_t * constellation.mean_energy / 10.0 ** (snr_db / 10.0)


def load_channel_trace(path) -> list[np.ndarray]:
    """Read a channel-trace file.

    Format: a header line ``n_r n_t count`` followed by ``count`` record
    lines, each holding ``n_r * n_t`` whitespace-separated ``re,im`` pairs in
    row-major order. Blank lines and ``#`` comments are ignored. An empty
    file yields an empty list.
    """
    try:
        with open(path) as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise TraceError(f"cannot read trace file ({exc.strerror})", path=path) from exc

    lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(raw)]
    lines = [(no, ln) for no, ln in lines if ln]
    if not lines:
        return []

    header_no, header = lines[0]
    try:
        n_r, n_t, count = (int(tok) for tok in header.split())
    except ValueError:
        raise TraceError("header must be 'n_r n_t count'", path, header_no) from None
    if n_r < 1 or n_t < 1 or count < 0:
        raise TraceError("header dimensions must be positive", path, header_no)

    records = lines[1:]
    if len(records) != count:
        raise TraceError(f"header announces {count} records, found {len(records)}", path, header_no)

    out = []
    for rec, (no, text) in enumerate(records):
        tokens = text.split()
        if len(tokens) != n_r * n_t:
            raise TraceError(
                f"expected {n_r * n_t} entries, found {len(tokens)}", path, no, rec
            )
        vals = np.empty(n_r * n_t, dtype=np.complex128)
        for k, tok in enumerate(tokens):
            try:
                re, im = tok.split(",")
                vals[k] = complex(float(re), float(im))
            except ValueError:
                raise TraceError(f"bad complex entry {tok!r}", path, no, rec) from None
        out.append(vals.reshape(n_r, n_t))
    return out


def write_channel_trace(path, matrices) -> None:
    matrices = [np.asarray(m) for m in matrices]
    with open(path, "w") as fh:
        if not matrices:
            return
        n_r, n_t = matrices[0].shape
        fh.write(f"{n_r} {n_t} {len(matrices)}\n")
        for m in matrices:
            if m.shape != (n_r, n_t):
                raise ValueError("all trace matrices must share one shape")
            fh.write(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in m.astype(complex).ravel()) + "\n")


_TRACE_CACHE: dict[str, list[np.ndarray]] = {}


def _trace_records(path: str) -> list[np.ndarray]:
    key = os.path.abspath(path)
    if key not in _TRACE_CACHE:
        _TRACE_CACHE[key] = load_channel_trace(path)
    return _TRACE_CACHE[key]


def draw_channel(spec: ChannelSpec, n_t: int, n_r: int, rng_seed: int) -> np.ndarray:
    if spec.kind is ChannelKind.IID_GAUSSIAN:
        rng = np.random.default_rng([int(spec.rng_seed) & (2**64 - 1), int(rng_seed) & (2**64 - 1), 1])
        return (rng.standard_normal((n_r, n_t)) + 1j * rng.standard_normal((n_r, n_t))) / math.sqrt(2)
    records = _trace_records(spec.path)
    if not records:
        raise TraceError("trace file holds no channel records", path=spec.path)
    H = records[int(rng_seed) % len(records)]
    if H.shape != (n_r, n_t):
        raise TraceError(f"trace dimensions {H.shape} do not match requested ({n_r}, {n_t})", path=spec.path)
    return H.copy()


def generate_instance(spec: ChannelSpec, n_t: int, n_r: int, constellation, snr_db: float,
                      rng_seed: int, sigma2: float | None = None) -> DetectionInstance:
    """Draw one detection instance ``y = H v + n``.

    ``sigma2`` overrides the SNR-derived noise variance (``0`` gives a
    noise-free instance).
    """
    constellation = Constellation.from_name(constellation)
    if n_r < n_t or n_t < 1:
        raise ValueError(f"need n_r >= n_t >= 1, got n_r={n_r}, n_t={n_t}")
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError("snr_db must be finite (or +inf for noise-free)")

    H = draw_channel(spec, n_t, n_r, rng_seed)
    rng = np.random.default_rng([int(rng_seed) & (2**64 - 1), 2])
    idx = rng.integers(0, constellation.size, size=n_t)
    v = constellation.points[idx]
    spins = constellation.spin_patterns[idx]
    bits = ((spins.reshape(-1) + 1) // 2).astype(np.uint8)

    if sigma2 is None:
        sigma2 = sigma2_for_snr(snr_db, n_t, constellation)
    n = math.sqrt(sigma2 / 2) * (rng.standard_normal(n_r) + 1j * rng.standard_normal(n_r))
    y = H @ v + n
    return DetectionInstance(H=H, y=y, constellation=constellation, snr_db=float(snr_db),
                             sigma2=float(sigma2), v_true=v, bits_true=bits, noise=n)
