"""Synthetic error channels and the mitigation pipeline: readout/decay corruption, Markov correction,
photon-number postselection and Bell-basis conversion."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, StateVector
from .xeb import SampleSet, _popcounts, ranks_of, sample


def apply_depolarizing(p: np.ndarray, phi: float) -> np.ndarray:
    """Global depolarizing channel on a probability table: ``phi * p + (1 - phi)/D``."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    p = np.asarray(p, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum():.12f}")
    return phi * p + (1.0 - phi) / len(p)


@dataclass
class ReadoutModel:
    """Per-qubit confusion ``beta[q][i, j] = p(i|j)``, optional pair confusions and bitstring-level decay.

    Pair matrices ``gamma[(a, b)][k, l] = p(k|l)`` use the two-bit index ``2*bit_a + bit_b``;
    qubits inside a pair are read out by the pair matrix instead of ``beta``.
    """

    beta: np.ndarray
    gamma: dict = field(default_factory=dict)
    p_decay: np.ndarray | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        n = self.beta.shape[0]
        if self.beta.shape != (n, 2, 2):
            raise ValueError("beta must have shape (n_q, 2, 2)")
        self.p_decay = np.zeros(n) if self.p_decay is None else np.broadcast_to(
            np.asarray(self.p_decay, dtype=float), (n,)).copy()
        self.gamma = {(int(a), int(b)): np.asarray(g, dtype=float) for (a, b), g in self.gamma.items()}
        _check_stochastic(self.beta, "beta")
        for k, g in self.gamma.items():
            if g.shape != (4, 4):
                raise ValueError(f"gamma{k} must be 4x4")
            _check_stochastic(g[None], f"gamma{k}")
        used = [q for pair in self.gamma for q in pair]
        if len(used) != len(set(used)):
            raise ValueError("gamma pairs overlap")
        if np.any((self.p_decay < 0) | (self.p_decay > 1)):
            raise ValueError("decay probabilities must lie in [0, 1]")

    @property
    def n_q(self) -> int:
        return self.beta.shape[0]

    @classmethod
    def symmetric(cls, n_q: int, flip: float, decay: float = 0.0) -> "ReadoutModel":
        b = np.array([[1 - flip, flip], [flip, 1 - flip]])
        return cls(np.repeat(b[None], n_q, axis=0), p_decay=np.full(n_q, decay))

    @classmethod
    def identity(cls, n_q: int) -> "ReadoutModel":
        return cls.symmetric(n_q, 0.0)

    def paired_qubits(self) -> set:
        return {q for pair in self.gamma for q in pair}

    @classmethod
    def from_csv(cls, text: str, n_q: int | None = None) -> "ReadoutModel":
        """Rows ``q,<site>,<p(0|1)>,<p(1|0)>``; ``decay,<site>,<p>``; ``pair,<a>,<b>,<16 entries of p(k|l) row-major>``."""
        singles, decays, pairs = {}, {}, {}
        for row in csv.reader(io.StringIO(text)):
            if not row or row[0].strip().startswith("#"):
                continue
            kind = row[0].strip()
            if kind == "q":
                singles[int(row[1])] = (float(row[2]), float(row[3]))
            elif kind == "decay":
                decays[int(row[1])] = float(row[2])
            elif kind == "pair":
                vals = [float(v) for v in row[3:]]
                if len(vals) != 16:
                    raise ValueError(f"pair row needs 16 entries, got {len(vals)}")
                pairs[(int(row[1]), int(row[2]))] = np.array(vals).reshape(4, 4)
            else:
                raise ValueError(f"unknown readout row kind '{kind}'")
        n = n_q if n_q is not None else 1 + max(list(singles) + list(decays) + [q for p in pairs for q in p])
        beta = np.repeat(np.eye(2)[None], n, axis=0)
        for q, (p01, p10) in singles.items():
            beta[q] = [[1 - p10, p01], [p10, 1 - p01]]
        pd = np.zeros(n)
        for q, v in decays.items():
            pd[q] = v
        return cls(beta, pairs, pd)

    def to_csv(self) -> str:
        rows = [f"q,{q},{self.beta[q][0, 1]:.12g},{self.beta[q][1, 0]:.12g}" for q in range(self.n_q)]
        rows += [f"decay,{q},{p:.12g}" for q, p in enumerate(self.p_decay) if p]
        rows += ["pair,%d,%d," % k + ",".join(f"{v:.12g}" for v in g.ravel()) for k, g in sorted(self.gamma.items())]
        return "\n".join(rows) + "\n"


def _check_stochastic(mats, name):
    if np.any(mats < -1e-12):
        raise ValueError(f"{name} has negative entries")
    if np.any(np.abs(mats.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError(f"{name} columns must sum to 1")


def _bit_matrix(bits: np.ndarray, n_q: int) -> np.ndarray:
    return ((bits[:, None] >> np.arange(n_q, dtype=np.int64)[None, :]) & 1).astype(np.int8)


def _pack(mat: np.ndarray) -> np.ndarray:
    return (mat.astype(np.int64) << np.arange(mat.shape[1], dtype=np.int64)[None, :]).sum(axis=1)


def _resample_columns(cur: np.ndarray, trans: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw new states from column ``cur`` of a column-stochastic matrix with uniforms ``u``."""
    cdf = np.cumsum(trans, axis=0)
    cdf[-1] = 1.0
    return (u[:, None] >= cdf[:, cur].T).sum(axis=1)


def corrupt_samples(s: SampleSet, model: ReadoutModel, seed) -> SampleSet:
    """Per shot: decay flips ``1 -> 0``, then readout confusion per qubit (or per pair)."""
    if model.n_q != s.n_q:
        raise ValueError(f"model covers {model.n_q} qubits, samples have {s.n_q}")
    rng = np.random.default_rng(seed)
    b = _bit_matrix(s.shots(), s.n_q)
    n_shots = b.shape[0]
    decay = rng.random(b.shape) < model.p_decay[None, :]
    b[(b == 1) & decay] = 0
    u = rng.random(b.shape)
    paired = model.paired_qubits()
    for q in range(s.n_q):
        if q in paired:
            continue
        p10, p01 = model.beta[q][1, 0], model.beta[q][0, 1]
        col = b[:, q].copy()
        b[:, q] = np.where(col == 0, u[:, q] < p10, u[:, q] >= p01)
    for (qa, qbb), g in sorted(model.gamma.items()):
        cur = 2 * b[:, qa] + b[:, qbb]
        new = _resample_columns(cur, g, u[:, qa])
        b[:, qa], b[:, qbb] = new >> 1, new & 1
    out = SampleSet.from_shots(s.n_q, s.m, _pack(b), seed=seed, label=s.label, post_noise=True)
    out.meta = {**s.meta, "corrupted": True}
    return out


def _transport(observed: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Column-stochastic ``T`` with ``T @ observed = target`` that moves the least probability mass."""
    k = len(observed)
    t = np.zeros((k, k))
    surplus = np.clip(observed - target, 0, None)
    deficit = np.clip(target - observed, 0, None)
    dsum = deficit.sum()
    for j in range(k):
        if observed[j] <= 0:
            t[j, j] = 1.0
            continue
        keep = min(observed[j], target[j]) / observed[j]
        t[j, j] = keep
        if dsum > 0 and surplus[j] > 0:
            t[:, j] += (1.0 - keep) * deficit / dsum
        else:
            t[j, j] = 1.0
    return t


def _invert_marginal(mat: np.ndarray, observed: np.ndarray):
    det = np.linalg.det(mat)
    if abs(det) < 1e-12:
        raise np.linalg.LinAlgError("readout matrix is singular; the Markov correction needs an invertible channel")
    est = np.linalg.solve(mat, observed)
    clamped = bool(np.any(est < 0))
    est = np.clip(est, 0, None)
    return est / est.sum(), clamped


def correct_markov(s: SampleSet, model: ReadoutModel, seed) -> SampleSet:
    """Stochastic readout correction.

    For each qubit (or correlated pair) the observed marginal is pushed through
    the inverse confusion matrix; negative estimates are clamped to 0 and the
    result renormalized. Each shot is then flipped by the minimal-transport
    Markov matrix taking the observed marginal to the estimate. Only ``beta``
    and ``gamma`` enter: bitstring-level decay is left for postselection.
    """
    if model.n_q != s.n_q:
        raise ValueError(f"model covers {model.n_q} qubits, samples have {s.n_q}")
    rng = np.random.default_rng(seed)
    b = _bit_matrix(s.shots(), s.n_q)
    if b.shape[0] == 0:
        return s
    u = rng.random(b.shape)
    clamped = []
    paired = model.paired_qubits()
    for q in range(s.n_q):
        if q in paired:
            continue
        o1 = b[:, q].mean()
        obs = np.array([1 - o1, o1])
        est, c = _invert_marginal(model.beta[q], obs)
        if c:
            clamped.append(q)
        t = _transport(obs, est)
        b[:, q] = _resample_columns(b[:, q].astype(np.int64), t, u[:, q])
    for (qa, qbb), g in sorted(model.gamma.items()):
        cur = (2 * b[:, qa] + b[:, qbb]).astype(np.int64)
        obs = np.bincount(cur, minlength=4) / len(cur)
        est, c = _invert_marginal(g, obs)
        if c:
            clamped.append((qa, qbb))
        new = _resample_columns(cur, _transport(obs, est), u[:, qa])
        b[:, qa], b[:, qbb] = new >> 1, new & 1
    out = SampleSet.from_shots(s.n_q, s.m, _pack(b), seed=seed, label=s.label, post_noise=True)
    out.meta = {**s.meta, "markov_corrected": True, "clamped": clamped}
    return out


def postselect(s: SampleSet, m: int | None = None) -> SampleSet:
    """Keep only strings with Hamming weight ``m`` (default: the set's sector label)."""
    m = s.m if m is None else m
    keep = _popcounts(s.bits) == m
    out = SampleSet(s.n_q, m, s.bits[keep], s.mult[keep], s.seed, s.label, post_noise=False)
    tot = s.total
    kept = out.total
    out.meta = {**s.meta, "retention": kept / tot if tot else math.nan, "empty": kept == 0}
    return out


BELL_TABLE = {0b00: (0, 0, 0), 0b01: (-1, -1, 1), 0b10: (1, 1, 1), 0b11: (0, 0, 2)}


def bond_coverings(lat: Lattice) -> list:
    """Four disjoint bond families (horizontal even/odd x, vertical even/odd y) covering every bond."""
    fam = [[], [], [], []]
    for i, j in lat.bonds:
        (xi, yi), (xj, yj) = lat.sites[i], lat.sites[j]
        if yi == yj:
            fam[min(xi, xj) % 2].append((i, j))
        else:
            fam[2 + min(yi, yj) % 2].append((i, j))
    return [f for f in fam if f]


def _check_pairing(pairing, n_q):
    used = [q for p in pairing for q in p]
    if len(used) != len(set(used)):
        raise ValueError("pairs in a Bell covering must not overlap")
    if any(q < 0 or q >= n_q for q in used):
        raise ValueError("pair refers to a site outside the register")


def bell_rotate(psi: StateVector, pairing) -> StateVector:
    """Apply the pair unitary mapping ``(|01>-|10>)/sqrt2 -> |01>`` and ``(|01>+|10>)/sqrt2 -> |10>``.

    ``|ab>`` lists the first pair site, then the second; ``|00>`` and ``|11>`` are untouched.
    """
    _check_pairing(pairing, psi.basis.n_q)
    states = psi.basis.states
    amp = psi.amplitudes.copy()
    r = 1.0 / math.sqrt(2.0)
    for a, b in pairing:
        ba = (states >> a) & 1
        bb = (states >> b) & 1
        idx01 = np.flatnonzero((ba == 0) & (bb == 1))
        partner = ranks_of(psi.basis, states[idx01] ^ ((1 << a) | (1 << b)))
        v01, v10 = amp[idx01].copy(), amp[partner].copy()
        amp[idx01] = r * (v01 - v10)
        amp[partner] = r * (v01 + v10)
    return StateVector(psi.basis, amp)


def bell_convert(psi: StateVector, pairing, shots: int, seed, label: str = "bell") -> SampleSet:
    out = sample(bell_rotate(psi, pairing), shots, seed, label=label)
    out.meta = {"pairing": [tuple(p) for p in pairing]}
    return out


def bell_decode(s: SampleSet, pairing) -> dict:
    """Shot-averaged ``(XX, YY, photons)`` per pair from the conversion table."""
    b = _bit_matrix(s.shots(), s.n_q)
    out = {}
    for a, c in pairing:
        code = 2 * b[:, a].astype(np.int64) + b[:, c]
        tab = np.array([BELL_TABLE[k] for k in range(4)], dtype=float)
        vals = tab[code]
        out[(a, c)] = (float(vals[:, 0].mean()), float(vals[:, 1].mean()), float(vals[:, 2].mean()))
    return out


def bell_bond_energies(psi: StateVector, lat: Lattice, shots: int, seed, model: ReadoutModel | None = None,
                       correct: bool = False, select: bool = False) -> dict:
    """Bond values ``<(XX+YY)/2>`` from Bell-converted samples, optionally through the noise pipeline.

    Covering ``k`` uses the seed stream ``(seed, k)``; corruption and correction take sub-streams.
    """
    bonds = {}
    retention = []
    for k, cov in enumerate(bond_coverings(lat)):
        s = bell_convert(psi, cov, shots, [seed, k, 0], label=f"bell{k}")
        if model is not None:
            s = corrupt_samples(s, model, [seed, k, 1])
            if correct:
                s = correct_markov(s, model, [seed, k, 2])
            if select:
                s = postselect(s, psi.basis.m)
                retention.append(s.meta["retention"])
        if s.total == 0:
            for p in cov:
                bonds[p] = math.nan
            continue
        for p, (xx, yy, _) in bell_decode(s, cov).items():
            bonds[p] = 0.5 * (xx + yy)
    return {"bonds": bonds, "eps": float(np.mean([bonds[b] for b in lat.bonds])), "retention": retention}
