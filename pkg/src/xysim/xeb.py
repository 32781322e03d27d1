"""Bitstring sampling and the cross-entropy benchmarking estimator family."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .lattice import SectorBasis, StateVector, enumerate_sector


@dataclass
class SampleSet:
    """Histogram of measured bitstrings (site 0 = least significant bit).

    ``bits`` holds unique raw bitstrings in ascending order and ``mult`` their
    multiplicities. ``m`` is the sector excitation number the samples were
    drawn from; ``post_noise`` marks sets that may leave the sector.
    """

    n_q: int
    m: int | None
    bits: np.ndarray
    mult: np.ndarray
    seed: int | list | None = None
    label: str = "Z"
    post_noise: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.int64)
        self.mult = np.asarray(self.mult, dtype=np.int64)
        if self.bits.shape != self.mult.shape:
            raise ValueError("bits and multiplicities differ in length")
        if len(self.bits):
            order = np.argsort(self.bits, kind="stable")
            b, m = self.bits[order], self.mult[order]
            ub, start = np.unique(b, return_index=True)
            self.bits, self.mult = ub, np.add.reduceat(m, start) if len(m) else m
        keep = self.mult > 0
        self.bits, self.mult = self.bits[keep], self.mult[keep]

    @classmethod
    def from_shots(cls, n_q, m, shots, **kw) -> "SampleSet":
        shots = np.asarray(shots, dtype=np.int64)
        ub, cnt = np.unique(shots, return_counts=True)
        return cls(n_q, m, ub, cnt, **kw)

    @property
    def total(self) -> int:
        return int(self.mult.sum())

    @property
    def counts(self) -> dict:
        return {int(b): int(c) for b, c in zip(self.bits, self.mult)}

    def shots(self) -> np.ndarray:
        """Expanded per-shot array in ascending bit order."""
        return np.repeat(self.bits, self.mult)

    @property
    def basis(self) -> SectorBasis:
        if self.m is None:
            raise ValueError("sample set has no sector label")
        return enumerate_sector(self.n_q, self.m)

    def weights(self) -> np.ndarray:
        return _popcounts(self.bits)

    def in_sector(self) -> bool:
        return self.m is not None and bool(np.all(self.weights() == self.m))

    def dumps(self) -> str:
        head = [f"# n_q={self.n_q}", f"# m={'' if self.m is None else self.m}", f"# basis={self.label}",
                f"# seed={_seed_text(self.seed)}", f"# M={self.total}",
                f"# post_noise={int(self.post_noise)}", "# bit order: site 0 is the rightmost character"]
        body = [f"{int(b):0{self.n_q}b} {int(c)}" for b, c in zip(self.bits, self.mult)]
        return "\n".join(head + body) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SampleSet":
        hdr, bits, mult = {}, [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    hdr[k.strip()] = v.strip()
                continue
            s, c = line.split()
            bits.append(int(s, 2))
            mult.append(int(c))
        for key in ("n_q", "m", "basis", "seed", "M"):
            if key not in hdr:
                raise ValueError(f"sample file header lacks '{key}'")
        out = cls(int(hdr["n_q"]), int(hdr["m"]) if hdr["m"] else None, np.array(bits, dtype=np.int64),
                  np.array(mult, dtype=np.int64), _parse_seed(hdr["seed"]), hdr["basis"],
                  bool(int(hdr.get("post_noise", "0"))))
        if out.total != int(hdr["M"]):
            raise ValueError(f"header M={hdr['M']} but rows sum to {out.total}")
        return out


def _seed_text(seed) -> str:
    """Seeds and seed streams as ``7`` or ``7,0,1``."""
    if seed is None:
        return ""
    if isinstance(seed, (list, tuple, np.ndarray)):
        return ",".join(str(int(x)) for x in seed)
    return str(int(seed))


def _parse_seed(text: str):
    if not text:
        return None
    parts = [int(x) for x in text.split(",")]
    return parts[0] if len(parts) == 1 and "," not in text else parts


def _popcounts(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).astype(np.uint64)
    c = np.zeros(len(x), dtype=np.int64)
    while x.any():
        c += (x & np.uint64(1)).astype(np.int64)
        x = x >> np.uint64(1)
    return c


def ranks_of(basis: SectorBasis, bits: np.ndarray) -> np.ndarray:
    """Sector ranks of raw bitstrings; ``-1`` for strings outside the sector."""
    bits = np.asarray(bits, dtype=np.int64)
    out = np.full(len(bits), -1, dtype=np.int64)
    ok = (_popcounts(bits) == basis.m) & ((bits >> basis.n_q) == 0) if basis.n_q < 63 else _popcounts(bits) == basis.m
    if ok.any():
        tables, width, nchunks = basis.rank_tables
        out[ok] = _kernels.rank_many(bits[ok], tables, width, nchunks)
    return out


def sample_probs(basis: SectorBasis, p: np.ndarray, m_shots: int, seed, label: str = "Z") -> SampleSet:
    """I.i.d. draws by inverse-CDF lookup: one cumulative sum, then a binary search per shot."""
    if m_shots == 0:
        return SampleSet(basis.n_q, basis.m, np.zeros(0, np.int64), np.zeros(0, np.int64), seed, label)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    idx = np.searchsorted(cdf, rng.random(m_shots), side="right")
    idx = np.minimum(idx, len(cdf) - 1)
    ranks, cnt = np.unique(idx, return_counts=True)
    return SampleSet(basis.n_q, basis.m, basis.states[ranks], cnt, seed, label)


def sample(psi: StateVector, m_shots: int, seed, label: str = "Z") -> SampleSet:
    if abs(psi.norm - 1.0) > 1e-8:
        raise ValueError(f"state norm {psi.norm:.12f} is not 1")
    return sample_probs(psi.basis, psi.probabilities(), int(m_shots), seed, label)


def self_xeb_naive(s: SampleSet, dim: int | None = None) -> float:
    d = dim if dim is not None else s.basis.dim
    m = s.total
    return float(d * np.sum((s.mult / m) ** 2) - 1.0)


def self_xeb_unbiased(s: SampleSet, dim: int | None = None) -> float:
    """Plug-in ``D sum (M_i/M)^2 - 1`` with its ``1/M`` relative and ``(D-1)/M`` absolute bias removed."""
    m = s.total
    if m < 2:
        raise ValueError(f"need M >= 2 shots, got {m}")
    d = dim if dim is not None else s.basis.dim
    return self_xeb_naive(s, d) / (1.0 - 1.0 / m) - (d - 1.0) / (m - 1.0)


def self_xeb_exact(psi) -> float:
    p = psi.probabilities() if isinstance(psi, StateVector) else np.asarray(psi, dtype=float)
    return float(len(p) * np.dot(p, p) - 1.0)


def probs_at(s: SampleSet, basis: SectorBasis, p: np.ndarray) -> np.ndarray:
    """Table values at each unique sampled string (0 off-sector)."""
    r = ranks_of(basis, s.bits)
    out = np.zeros(len(r))
    ok = r >= 0
    out[ok] = p[r[ok]]
    return out


def linear_xeb(s: SampleSet, p_sim: np.ndarray, basis: SectorBasis | None = None) -> float:
    """``D * mean_shots p_sim - 1``."""
    basis = basis or s.basis
    p_sim = np.asarray(p_sim, dtype=float)
    if p_sim.shape != (basis.dim,):
        raise ValueError("p_sim must be a table over the sector")
    vals = probs_at(s, basis, p_sim)
    return float(basis.dim * np.dot(vals, s.mult) / s.total - 1.0)


def phi_from_selfxeb(noisy: float, ideal: float) -> tuple:
    """``Phi = sqrt(noisy/ideal)`` clamped to [0, 1]; flag is True when ``noisy > ideal``."""
    if not ideal > 0:
        raise ValueError(f"ideal self-XEB must be positive, got {ideal}")
    r = noisy / ideal
    return float(math.sqrt(min(max(r, 0.0), 1.0))), bool(r > 1.0)


@dataclass
class PTCheck:
    bin_edges: np.ndarray
    density: np.ndarray
    delta: float
    ks: float
    self_xeb: float


def pt_check(data, dim: int | None = None, n_bins: int = 40) -> PTCheck:
    """Porter-Thomas diagnostics of a probability table (or a SampleSet's empirical table)."""
    if isinstance(data, SampleSet):
        basis = data.basis
        p = np.zeros(basis.dim)
        r = ranks_of(basis, data.bits)
        ok = r >= 0
        np.add.at(p, r[ok], data.mult[ok] / data.total)
        sx = self_xeb_unbiased(data)
    elif isinstance(data, StateVector):
        p = data.probabilities()
        sx = self_xeb_exact(p)
    else:
        p = np.asarray(data, dtype=float)
        if p.size == 0:
            raise ValueError("empty probability table")
        sx = self_xeb_exact(p) if dim is None else float(dim * np.dot(p, p) - 1.0)
    d = dim if dim is not None else len(p)
    x = d * p
    pos = x[x > 0]
    lo = max(pos.min() if len(pos) else 1e-6, 1e-6)
    hi = max(x.max(), lo * 10)
    edges = np.geomspace(lo, hi, n_bins + 1)
    hist, _ = np.histogram(x, bins=edges)
    dens = hist / (len(x) * np.diff(edges))
    ks = float(stats.kstest(x, "expon").statistic)
    return PTCheck(edges, dens, abs(sx - 1.0), ks, sx)


def time_average_probs(snapshots) -> tuple:
    """Elementwise mean of ``|psi|^2`` over snapshots; returns ``(p_avg, N_s)``."""
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("need at least one snapshot")
    b0 = snaps[0].basis if isinstance(snaps[0], StateVector) else None
    acc = np.zeros(len(snaps[0].amplitudes) if b0 is not None else len(snaps[0]))
    for s in snaps:
        if isinstance(s, StateVector):
            if s.basis != b0:
                raise ValueError("snapshots live in different sectors")
            acc += s.probabilities()
        else:
            s = np.asarray(s, dtype=float)
            if s.shape != acc.shape:
                raise ValueError("snapshot tables differ in length")
            acc += s
    return acc / len(snaps), len(snaps)


def renormalized_self_xeb(p: np.ndarray, p_avg: np.ndarray) -> float:
    """``sum_s p_avg (p/p_avg)^2 - 1``; reduces to ``D sum p^2 - 1`` when ``p_avg = 1/D``."""
    return float(np.sum(p * p / p_avg) - 1.0)


@dataclass
class RenormalizedFidelity:
    f_tilde: float
    f_corrected: float
    numerator: float
    denominator: float
    denominator_literal: float
    n_s: int


def renormalized_fidelity(s: SampleSet, p_sim: np.ndarray, p_avg: np.ndarray, n_s: int,
                          basis: SectorBasis | None = None) -> RenormalizedFidelity:
    """Hamiltonian-reweighted fidelity estimator and its ``1/N_s`` bias-corrected value.

    Numerator: shot mean of ``p_sim/p_avg`` minus 1. Denominator: the reweighted
    self-XEB of ``p_sim``. ``denominator_literal`` keeps an extra factor ``D``
    inside the reweighted sum, the alternative reading that does not reduce to
    the plain self-XEB for uniform ``p_avg``.
    """
    basis = basis or s.basis
    p_sim = np.asarray(p_sim, dtype=float)
    p_avg = np.asarray(p_avg, dtype=float)
    r = ranks_of(basis, s.bits)
    if np.any(r < 0):
        raise ValueError("renormalized fidelity needs in-sector samples")
    pa = p_avg[r]
    bad = np.flatnonzero(pa <= 0)
    if len(bad):
        raise ValueError(f"p_avg vanishes on observed string {basis.bitstring(s.bits[bad[0]])}")
    num = float(np.dot(p_sim[r] / pa, s.mult) / s.total - 1.0)
    den = renormalized_self_xeb(p_sim, p_avg)
    lit = float(basis.dim * np.sum(p_sim * p_sim / p_avg) - 1.0)
    ft = num / den
    fc = (ft - 1.0 / n_s) / (1.0 - 1.0 / n_s) if n_s > 1 else math.nan
    return RenormalizedFidelity(ft, fc, num, den, lit, n_s)


@dataclass
class FidelityFit:
    F0: float = math.nan
    eps: float = math.nan
    cycle_time: float = 1.0
    rms: float = math.nan
    valid: bool = False


def fit_fidelity_ansatz(points, cycle_time: float = 1.0) -> FidelityFit:
    """Least squares of ``log F = N_q log F0 - eps N_q t/T`` over ``(t, N_q, F)`` points."""
    pts = [(float(t), float(n), float(f)) for t, n, f in points if f > 0]
    fit = FidelityFit(cycle_time=cycle_time)
    if len(pts) < 3 or len({p[0] for p in pts}) < 2:
        return fit
    t, n, f = (np.array(c) for c in zip(*pts))
    a = np.column_stack([n, -n * t / cycle_time])
    y = np.log(f)
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    fit.F0 = float(math.exp(coef[0]))
    fit.eps = float(coef[1])
    fit.rms = float(np.sqrt(np.mean((np.exp(a @ coef) - f) ** 2)))
    fit.valid = True
    return fit
