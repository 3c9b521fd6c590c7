"""Ising forms of ML MIMO detection.

Energy convention: ``E(s) = sum_i f_i s_i + sum_{i<j} g_ij s_i s_j``. Every
model carries an explicit ``offset`` so that ``E(s) + offset`` equals the
Euclidean residual ``||y - H v(s)||^2`` of the decoded symbols.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import Constellation, DetectionInstance


def check_spins(s, n_v: int | None = None) -> np.ndarray:
    s = np.asarray(s)
    if s.ndim != 1:
        raise ValueError("spin state must be a 1-D vector")
    if n_v is not None and s.shape[0] != n_v:
        raise ValueError(f"spin state has length {s.shape[0]}, model has {n_v} spins")
    if not np.all(np.abs(s) == 1):
        raise ValueError("spin entries must be exactly +1 or -1")
    return s.astype(np.int8)


@dataclass(frozen=True)
class SpinMapping:
    """Linear map between ``n_t * M`` spins and ``n_t`` symbols.

    User ``u`` (0-based) owns spins ``[M*u, M*(u+1))``; inside the block the
    layout is ``[Re q_1 .. Re q_nq, Im q_1 .. Im q_nq]`` (BPSK: one spin).
    """

    n_t: int
    constellation: Constellation

    @property
    def bits_per_symbol(self) -> int:
        return self.constellation.bits_per_symbol

    @property
    def n_v(self) -> int:
        return self.n_t * self.bits_per_symbol

    @cached_property
    def matrix(self) -> np.ndarray:
        """Complex ``A`` (n_t x n_v) with ``v = A @ s``."""
        m = self.bits_per_symbol
        A = np.zeros((self.n_t, self.n_v), dtype=np.complex128)
        for u in range(self.n_t):
            A[u, m * u:m * (u + 1)] = self.constellation.user_matrix
        return A

    def to_symbols(self, s) -> np.ndarray:
        s = np.asarray(s)
        if s.shape[-1] != self.n_v:
            raise ValueError(f"spin state has length {s.shape[-1]}, mapping expects {self.n_v}")
        return s.astype(float) @ self.matrix.T

    def to_indices(self, s) -> np.ndarray:
        """Constellation index of each user's symbol."""
        m = self.bits_per_symbol
        bits = ((np.asarray(s).reshape(self.n_t, m) + 1) // 2).astype(np.int64)
        return bits @ (1 << np.arange(m - 1, -1, -1))

    def from_symbols(self, v) -> np.ndarray:
        """Spin state of constellation symbols (exact lattice points only)."""
        v = np.asarray(v)
        pts = self.constellation.points
        idx = np.argmin(np.abs(v[:, None] - pts[None, :]), axis=1)
        if not np.allclose(pts[idx], v, atol=1e-9):
            raise ValueError("symbols are not constellation points; slice them first")
        return self.constellation.spin_patterns[idx].reshape(-1).copy()

    @staticmethod
    def to_bits(s) -> np.ndarray:
        return ((np.asarray(s) + 1) // 2).astype(np.uint8)


def map_spins_to_symbols(s, mapping: SpinMapping) -> np.ndarray:
    return mapping.to_symbols(check_spins(s, mapping.n_v))


@dataclass(frozen=True)
class SpinBlock:
    """Decoding metadata for a contiguous run of spins.

    Block spins decode to full symbol vectors as ``shift + scale * A s``;
    ``layer`` is set for split-detection blocks (0 = most significant).
    """

    start: int
    stop: int
    mapping: SpinMapping
    shift: np.ndarray | None = None
    scale: float = 1.0
    layer: int | None = None

    def decode(self, s_full) -> np.ndarray:
        v = self.scale * self.mapping.to_symbols(np.asarray(s_full)[self.start:self.stop])
        return v if self.shift is None else self.shift + v


@dataclass(frozen=True)
class Reduction:
    """Record of spins fixed by :func:`reduce_ising`."""

    parent_n_v: int
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray

    def expand(self, s_free) -> np.ndarray:
        full = np.empty(self.parent_n_v, dtype=np.int8)
        full[self.free] = s_free
        full[self.fixed] = self.fixed_values
        return full


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Ising model with linear terms ``f``, strictly upper-triangular couplings
    ``g`` (dense storage) and a constant ``offset``."""

    f: np.ndarray
    g: np.ndarray
    offset: float = 0.0
    blocks: tuple[SpinBlock, ...] = ()
    reduction: Reduction | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        g = np.asarray(self.g, dtype=float)
        n = f.shape[0]
        if f.ndim != 1 or g.shape != (n, n):
            raise ValueError(f"inconsistent shapes f={f.shape}, g={g.shape}")
        if np.any(np.tril(g) != 0):
            raise ValueError("couplings must be strictly upper-triangular (i < j)")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n_v(self) -> int:
        return self.f.shape[0]

    @property
    def mapping(self) -> SpinMapping | None:
        return self.blocks[0].mapping if len(self.blocks) == 1 else None

    @cached_property
    def J(self) -> np.ndarray:
        """Symmetric coupling matrix with zero diagonal."""
        return np.ascontiguousarray(self.g + self.g.T)

    @property
    def mean_abs_coupling(self) -> float:
        n = self.n_v
        if n < 2:
            return 0.0
        iu = np.triu_indices(n, 1)
        return float(np.mean(np.abs(self.g[iu])))

    def energy(self, s) -> np.ndarray | float:
        return energy(self, s)

    def full_state(self, s) -> np.ndarray:
        s = np.asarray(s)
        return self.reduction.expand(s) if self.reduction is not None else s

    def decode(self, s) -> list[np.ndarray]:
        """Candidate symbol vectors, one per block."""
        full = self.full_state(s)
        return [b.decode(full) for b in self.blocks]

    def couplings(self) -> list[tuple[int, int, float]]:
        i, j = np.nonzero(self.g)
        return [(int(a), int(b), float(self.g[a, b])) for a, b in zip(i, j)]

    def to_dict(self) -> dict:
        return {
            "n_v": self.n_v,
            "f": [float(x) for x in self.f],
            "g": [[i, j, v] for i, j, v in self.couplings()],
            "offset": self.offset,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "IsingModel":
        n = int(doc["n_v"])
        f = np.asarray(doc["f"], dtype=float)
        if f.shape != (n,):
            raise ValueError(f"f has {f.shape[0]} entries, n_v is {n}")
        g = np.zeros((n, n))
        for i, j, val in doc.get("g", []):
            i, j = int(i), int(j)
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"invalid coupling index ({i}, {j})")
            a, b = min(i, j), max(i, j)
            g[a, b] += float(val)
        return cls(f, g, float(doc.get("offset", 0.0)))

    @classmethod
    def from_json(cls, text: str) -> "IsingModel":
        return cls.from_dict(json.loads(text))


def energy(model: IsingModel, s) -> np.ndarray | float:
    """Ising energy without the offset. Accepts one state or a stack of them."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != model.n_v:
        raise ValueError(f"spin state has length {s.shape[-1]}, model has {model.n_v} spins")
    e = s @ model.f + np.einsum("...i,ij,...j->...", s, model.g, s)
    return float(e) if np.ndim(e) == 0 else e


def ml_ising(H: np.ndarray, y: np.ndarray, mapping: SpinMapping) -> tuple[np.ndarray, np.ndarray, float]:
    """``(f, g, offset)`` with ``E(s) + offset = ||y - H A s||^2``."""
    B = H @ mapping.matrix
    Q = B.conj().T @ B
    f = -2.0 * np.real(y.conj() @ B)
    g = np.triu(2.0 * np.real(Q), 1)
    offset = float(np.real(np.vdot(y, y)) + np.sum(np.real(np.diag(Q))))
    return f, g, offset


def build_ml_ising(inst: DetectionInstance) -> IsingModel:
    mapping = SpinMapping(inst.n_t, inst.constellation)
    f, g, offset = ml_ising(inst.H, inst.y, mapping)
    return IsingModel(f, g, offset, blocks=(SpinBlock(0, mapping.n_v, mapping),), meta={"form": "ml"})


def combine_models(models) -> IsingModel:
    """Block-diagonal concatenation; energies and offsets add."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model to combine")
    if len(models) == 1:
        return models[0]
    if any(m.reduction is not None for m in models):
        raise ValueError("cannot combine reduced models")
    n = sum(m.n_v for m in models)
    f = np.concatenate([m.f for m in models])
    g = np.zeros((n, n))
    blocks = []
    start = 0
    for m in models:
        stop = start + m.n_v
        g[start:stop, start:stop] = m.g
        for b in m.blocks:
            blocks.append(SpinBlock(b.start + start, b.stop + start, b.mapping, b.shift, b.scale, b.layer))
        start = stop
    return IsingModel(f, g, sum(m.offset for m in models), blocks=tuple(blocks),
                      meta={"form": "combined", "sizes": [m.n_v for m in models]})


def reduce_ising(model: IsingModel, fixed: dict) -> IsingModel:
    """Fix some spins and fold their contributions into ``f`` and ``offset``."""
    n = model.n_v
    idx = np.array(sorted(int(i) for i in fixed), dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"fixed spin index out of range for a {n}-spin model")
    vals = np.array([fixed[i] for i in idx], dtype=float)
    if not np.all(np.abs(vals) == 1):
        raise ValueError("fixed spin values must be +1 or -1")
    if model.reduction is not None:
        raise ValueError("model is already reduced")
    if idx.size == 0:
        return model
    free = np.setdiff1d(np.arange(n), idx)
    J = model.J
    f_red = model.f[free] + J[np.ix_(free, idx)] @ vals
    g_red = model.g[np.ix_(free, free)]
    offset = model.offset + float(model.f[idx] @ vals + vals @ model.g[np.ix_(idx, idx)] @ vals)
    red = Reduction(n, free, idx, vals.astype(np.int8))
    return IsingModel(f_red, g_red, offset, blocks=model.blocks, reduction=red,
                      meta={**model.meta, "reduced": int(idx.size)})


def split_layers(v, constellation: Constellation) -> np.ndarray:
    """Decompose lattice symbols into QPSK layers, shape (n_q, n_t)."""
    if constellation.n_q < 2:
        raise ValueError(f"{constellation} has no layer split (needs 16-QAM or higher)")
    mapping = SpinMapping(len(v), constellation)
    s = mapping.from_symbols(v).reshape(len(v), 2, constellation.n_q)
    return (s[:, 0, :] + 1j * s[:, 1, :]).T


def build_split_forms(inst: DetectionInstance, v_mmse) -> IsingModel:
    """Split-detection form: one QPSK ML model per layer, others fixed.

    For layer ``i`` with weight ``w_i`` the residual
    ``(y - H sum_{k != i} w_k q_k) / w_i`` is detected as a QPSK problem.
    Blocks are concatenated in layer order; total size equals the original
    ``n_t * M`` spins.
    """
    c = inst.constellation
    layers = split_layers(np.asarray(v_mmse), c)
    w = c.layer_weights
    qpsk = SpinMapping(inst.n_t, Constellation.from_name("QPSK"))
    models = []
    for i in range(c.n_q):
        shift = sum(w[k] * layers[k] for k in range(c.n_q) if k != i)
        y_i = (inst.y - inst.H @ shift) / w[i]
        f, g, offset = ml_ising(inst.H, y_i, qpsk)
        block = SpinBlock(0, qpsk.n_v, qpsk, shift=shift, scale=float(w[i]), layer=i)
        models.append(IsingModel(f, g, offset, blocks=(block,)))
    out = combine_models(models)
    return IsingModel(out.f, out.g, out.offset, blocks=out.blocks,
                      meta={"form": "split", "n_q": c.n_q, "weights": w.tolist()})


def split_seed(v_mmse, constellation: Constellation) -> np.ndarray:
    """Spin state of a split form that reproduces ``v_mmse`` in every block."""
    layers = split_layers(np.asarray(v_mmse), constellation)
    qpsk = SpinMapping(layers.shape[1], Constellation.from_name("QPSK"))
    return np.concatenate([qpsk.from_symbols(q) for q in layers])


def reassemble_split(model: IsingModel, s) -> np.ndarray:
    """Full symbol vector built from every layer block's own decision."""
    s = np.asarray(s)
    v = 0
    for b in model.blocks:
        if b.layer is None:
            raise ValueError("model has no split-layer blocks")
        v = v + b.scale * b.mapping.to_symbols(s[b.start:b.stop])
    return v
