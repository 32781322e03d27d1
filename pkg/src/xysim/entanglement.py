"""Schmidt-block analysis, entropy measures, U(1) typicality references and randomized-measurement purity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import _kernels
from .lattice import Lattice, StateVector, popcount

LN2 = math.log(2.0)


@dataclass
class SchmidtSpectrum:
    cut: tuple
    blocks: dict
    L: int
    R: int
    M: int

    def values(self) -> np.ndarray:
        return np.concatenate([self.blocks[k] for k in sorted(self.blocks)]) if self.blocks else np.zeros(0)

    def csv(self) -> str:
        rows = ["M_L,index,S"]
        for ml in sorted(self.blocks):
            rows += [f"{ml},{i},{s:.15g}" for i, s in enumerate(self.blocks[ml])]
        return "\n".join(rows) + "\n"


def _split(psi: StateVector, cut):
    n = psi.basis.n_q
    left = sorted({int(c) for c in cut})
    if not left or len(left) >= n or left[0] < 0 or left[-1] >= n:
        raise ValueError(f"cut must be a nonempty proper subset of the {n} sites, got {list(cut)}")
    right = [i for i in range(n) if i not in set(left)]
    lb, rb = _kernels.schmidt_blocks_index(psi.basis.states, np.asarray(left, dtype=np.int64),
                                           np.asarray(right, dtype=np.int64))
    return left, right, lb, rb


def _block_matrices(psi: StateVector, cut):
    """Yield ``(M_L, left_codes, right_codes, matrix)`` with ``psi = sum A[a, b] |a>_L |b>_R``."""
    left, right, lb, rb = _split(psi, cut)
    ml = np.array([popcount(int(x)) for x in lb]) if len(lb) < 4096 else _popcounts(lb)
    order = np.argsort(ml, kind="stable")
    ml_sorted = ml[order]
    bounds = np.flatnonzero(np.diff(ml_sorted)) + 1
    for idx in np.split(order, bounds):
        if len(idx) == 0:
            continue
        lcodes, li = np.unique(lb[idx], return_inverse=True)
        rcodes, ri = np.unique(rb[idx], return_inverse=True)
        a = np.zeros((len(lcodes), len(rcodes)), dtype=np.complex128)
        a[li, ri] = psi.amplitudes[idx]
        yield int(ml[idx[0]]), lcodes, rcodes, a
    return left, right


def _popcounts(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    c = np.zeros(len(x), dtype=np.int64)
    for _ in range(64):
        c += (x & np.uint64(1)).astype(np.int64)
        x >>= np.uint64(1)
        if not x.any():
            break
    return c


def schmidt(psi: StateVector, cut=None, lat: Lattice | None = None) -> SchmidtSpectrum:
    """Per-``M_L`` Schmidt values; default cut halves the lattice across its longer side."""
    if cut is None:
        if lat is None:
            raise ValueError("either a cut or a lattice is required")
        cut = lat.shortest_direction_cut()
    blocks = {}
    for ml, _, _, a in _block_matrices(psi, cut):
        s = np.linalg.svd(a, compute_uv=False)
        blocks[ml] = np.sort(s)[::-1]
    n_l = len(set(cut))
    return SchmidtSpectrum(tuple(sorted(set(int(c) for c in cut))), blocks, n_l, psi.basis.n_q - n_l, psi.basis.m)


def reduced_density_matrix(psi: StateVector, subsystem) -> np.ndarray:
    """Dense ``2^n_sub`` RDM of the listed sites; bit ``p`` is the ``p``-th smallest listed site."""
    sub = sorted({int(c) for c in subsystem})
    rho = np.zeros((1 << len(sub), 1 << len(sub)), dtype=np.complex128)
    if len(sub) == psi.basis.n_q:
        raise ValueError("subsystem must be a proper subset")
    for _, lcodes, _, a in _block_matrices(psi, sub):
        rho[np.ix_(lcodes, lcodes)] += a @ a.conj().T
    return rho


@dataclass
class EntropyBundle:
    von_neumann: float
    renyi_half: float
    renyi_2: float
    e_p: float
    n_eff: float
    fidelity: float = 1.0

    def scalars(self) -> dict:
        return {"S_vn_nats": self.von_neumann, "S_vn_bits": self.von_neumann / LN2, "E_N_bits": self.renyi_half,
                "S2_bits": self.renyi_2, "E_P_bits": self.e_p, "n_eff": self.n_eff, "fidelity": self.fidelity}


def entropies(s: SchmidtSpectrum | np.ndarray, fidelity: float = 1.0) -> EntropyBundle:
    """von Neumann (nats), log-negativity and Renyi-2 (bits), ``E_P = E_N + log2 F``, ``n_eff``."""
    if not fidelity > 0:
        raise ValueError(f"fidelity must be positive, got {fidelity}")
    vals = s.values() if isinstance(s, SchmidtSpectrum) else np.asarray(s, dtype=float)
    lam = vals ** 2
    lam = lam[lam > 0]
    svn = float(-np.sum(lam * np.log(lam)))
    en = float(2.0 * math.log2(np.sum(vals)))
    r2 = float(-math.log2(np.sum(lam ** 2)))
    return EntropyBundle(svn, en, r2, en + math.log2(fidelity), 2.0 * svn / LN2 + 1.0 / LN2, fidelity)


@dataclass
class QuarterCircle:
    """U(1)-constrained quarter-circle law for ``L + R`` sites holding ``M`` excitations."""

    L: int
    R: int
    M: int
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        d = math.comb(self.L + self.R, self.M)
        self.D = d
        self.blocks = []
        for ml in range(0, min(self.L, self.M) + 1):
            dl, dr = math.comb(self.L, ml), math.comb(self.R, self.M - ml)
            if dl == 0 or dr == 0:
                continue
            lam = dl / dr
            scale = math.sqrt(dr / d)
            self.blocks.append((ml, dl, dr, abs(1 - math.sqrt(lam)) * scale, (1 + math.sqrt(lam)) * scale))

    def block_density(self, ml_entry, s):
        _, _, _, lo, hi = ml_entry
        s = np.asarray(s, dtype=float)
        arg = (hi ** 2 - s ** 2) * (s ** 2 - lo ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where((s > lo) & (s < hi) & (s > 0), self.D / (np.pi * s) * np.sqrt(np.clip(arg, 0, None)), 0.0)
        return out

    def density(self, s):
        """Summed density; integrates to the total number of Schmidt values."""
        return sum(self.block_density(b, s) for b in self.blocks)

    @property
    def count(self) -> int:
        return sum(min(b[1], b[2]) for b in self.blocks)

    def moment(self, k: int) -> float:
        return sum(self._block_integral(b, lambda s: s ** k) for b in self.blocks)

    def _block_integral(self, b, f):
        lo, hi = b[3], b[4]
        # substitute s = sqrt(lo^2 + (hi^2 - lo^2) sin^2 th) to remove the edge singularities
        def g(th):
            s2 = lo ** 2 + (hi ** 2 - lo ** 2) * math.sin(th) ** 2
            s = math.sqrt(s2)
            # ds = (hi^2-lo^2) sin cos / s dth ; density*ds simplifies to D/pi * (hi^2-lo^2)^2 sin^2 cos^2 / s^2
            return f(s) * self.D / math.pi * (hi ** 2 - lo ** 2) ** 2 * (math.sin(th) * math.cos(th)) ** 2 / s2
        return integrate.quad(g, 0.0, math.pi / 2, limit=200)[0]

    def cdf(self, s) -> np.ndarray:
        """Fraction of Schmidt values below ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        for b in self.blocks:
            lo, hi = b[3], b[4]
            for n, x in enumerate(s):
                if x <= lo:
                    continue
                if x >= hi:
                    out[n] += min(b[1], b[2])
                    continue
                th_max = math.asin(math.sqrt((x ** 2 - lo ** 2) / (hi ** 2 - lo ** 2)))

                def g(th):
                    s2 = lo ** 2 + (hi ** 2 - lo ** 2) * math.sin(th) ** 2
                    return self.D / math.pi * (hi ** 2 - lo ** 2) ** 2 * (math.sin(th) * math.cos(th)) ** 2 / s2
                out[n] += integrate.quad(g, 0.0, th_max, limit=200)[0]
        return out / self.count

    def entropy_exact(self) -> float:
        """Typical von Neumann entropy (nats) from the block sum, before the Gaussian approximation."""
        tot = 0.0
        for _, dl, dr, _, _ in self.blocks:
            w = dl * dr / self.D
            small, big = min(dl, dr), max(dl, dr)
            tot += w * (math.log(self.D / big) - small / (2.0 * big))
        return tot


def generic_quarter_circle(d_l: int, d_r: int) -> QuarterCircle:
    """Irreducible-RDM law: a single block with ``D = D_L D_R``."""
    qc = QuarterCircle.__new__(QuarterCircle)
    qc.L, qc.R, qc.M = 0, 0, 0
    qc.D = d_l * d_r
    lam = d_l / d_r
    scale = math.sqrt(d_r / qc.D)
    qc.blocks = [(0, d_l, d_r, abs(1 - math.sqrt(lam)) * scale, (1 + math.sqrt(lam)) * scale)]
    return qc


def theory_quarter_circle(L: int, R: int, M: int) -> QuarterCircle:
    if L < 0 or R < 0 or not (0 <= M <= L + R):
        raise ValueError(f"invalid partition L={L}, R={R}, M={M}")
    return QuarterCircle(L, R, M)


C_U1 = 0.5 + 1.0 / (4.0 * LN2) + math.log2(2 ** 1.5 / 3.0 * 64.0 / (9.0 * math.pi ** 2))
C_GENERIC = 1.0 / (2.0 * LN2) + math.log2(64.0 / (9.0 * math.pi ** 2))
IDEAL_LINE_INTERCEPT_QUOTED = -0.449


@dataclass
class MaxEntropies:
    N: int
    s_u1: float
    s_generic: float
    en_u1: float
    en_generic: float
    renyi2_u1: float
    c_u1: float = C_U1
    c_generic: float = C_GENERIC
    ideal_line_intercept: float = -1.0 / (2.0 * LN2) + 0.5 * (C_U1 + C_GENERIC)
    ideal_line_intercept_quoted: float = IDEAL_LINE_INTERCEPT_QUOTED

    @property
    def generic_offset(self) -> float:
        return self.s_generic - self.s_u1

    def scalars(self) -> dict:
        d = dict(self.__dict__)
        d["generic_offset"] = self.generic_offset
        return d


def theory_max_entropies(N: int) -> MaxEntropies:
    """Large-N typical-state values at half filling; entropies in nats, E_N and Renyi-2 in bits."""
    if N < 4 or N % 2:
        raise ValueError(f"N must be an even integer >= 4, got {N}")
    s_u1 = N / 2 * LN2 - LN2 / 2 - 0.25
    s_gen = N / 2 * LN2 - 0.5
    return MaxEntropies(N, s_u1, s_gen, N / 2 + math.log2(2 ** 1.5 / 3.0 * 64.0 / (9.0 * math.pi ** 2)),
                        N / 2 + math.log2(64.0 / (9.0 * math.pi ** 2)), N / 2 + math.log2(math.sqrt(3.0) / 4.0))


def fidelity_slope(N: int) -> float:
    """Exact half-filling prefactor ``4 * 2^L sqrt(C(L,L/2) C(R,R/2)) / C(N,N/2)`` with ``L = floor(N/2)``."""
    L = N // 2
    R = N - L
    return 4.0 * math.exp(L * LN2 + 0.5 * (math.log(math.comb(L, L // 2)) + math.log(math.comb(R, R // 2)))
                          - math.log(math.comb(N, N // 2)))


FIDELITY_SLOPE_ASYMPTOTIC = 4.0 * math.sqrt(2.0)


def fidelity_chi_bound(chi: float, chi_max: float, N: int) -> dict:
    if not (0 <= chi <= chi_max) or chi_max <= 0:
        raise ValueError(f"need 0 <= chi <= chi_max, got chi={chi}, chi_max={chi_max}")
    raw = fidelity_slope(N) * chi / chi_max
    return {"bound": min(raw, 1.0), "raw": raw, "slope": fidelity_slope(N),
            "slope_asymptotic": FIDELITY_SLOPE_ASYMPTOTIC}


def saturation_time(trace, L_long: float, s_max: float | None = None, frac: float = 0.9) -> dict:
    """First time the entropy reaches ``frac * s_max`` (linear interpolation)."""
    t = np.asarray([p[0] for p in trace], dtype=float)
    s = np.asarray([p[1] for p in trace], dtype=float)
    target = frac * (s.max() if s_max is None else s_max)
    hit = np.flatnonzero(s >= target)
    if len(hit) == 0:
        return {"t_sat": math.nan, "ratio": math.nan, "valid": False}
    k = int(hit[0])
    if k == 0:
        ts = t[0]
    else:
        ts = t[k - 1] + (target - s[k - 1]) * (t[k] - t[k - 1]) / (s[k] - s[k - 1])
    return {"t_sat": float(ts), "ratio": float(ts / L_long), "valid": True}


@lru_cache(maxsize=1)
def clifford_group() -> np.ndarray:
    """The 24 single-qubit Cliffords modulo phase, in a fixed order."""
    h = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    s = np.array([[1, 0], [0, 1j]], dtype=complex)

    def canon(u):
        k = np.flatnonzero(np.abs(u.ravel()) > 1e-9)[0]
        v = u / (u.ravel()[k] / abs(u.ravel()[k]))
        return tuple(np.round(v.ravel(), 9))

    found = {canon(np.eye(2)): np.eye(2, dtype=complex)}
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        nxt = []
        for u in frontier:
            for g in (h, s):
                w = g @ u
                key = canon(w)
                if key not in found:
                    found[key] = w
                    nxt.append(w)
        frontier = nxt
    keys = sorted(found)
    return np.array([found[k] for k in keys])


def rotated_probabilities(rho: np.ndarray, unitaries) -> np.ndarray:
    """Diagonal of ``U rho U^dag`` for ``U = kron`` of single-qubit ``unitaries`` (qubit p = bit p)."""
    n = len(unitaries)
    t = rho.reshape((2,) * (2 * n))
    # tensor axis a corresponds to bit n-1-a
    for p, u in enumerate(unitaries):
        ax = n - 1 - p
        t = np.moveaxis(np.tensordot(u, t, axes=([1], [ax])), 0, ax)
        t = np.moveaxis(np.tensordot(u.conj(), t, axes=([1], [n + ax])), 0, n + ax)
    m = t.reshape(1 << n, 1 << n)
    return np.clip(np.real(np.diag(m)), 0.0, None)


def _hamming_kernel_product(p: np.ndarray, n: int) -> float:
    """``sum_{s,s'} p(s) p(s') (-2)^{-Hamming(s,s')}`` via a one-qubit kernel on every axis."""
    k = np.array([[1.0, -0.5], [-0.5, 1.0]])
    t = p.reshape((2,) * n)
    for ax in range(n):
        t = np.moveaxis(np.tensordot(k, t, axes=([1], [ax])), 0, ax)
    return float(np.dot(p, t.reshape(-1)))


def purity_from_counts(counts: np.ndarray, n_sub: int, unbiased: bool = True) -> float:
    """Single-setting purity estimate from a histogram over ``2^n_sub`` outcomes."""
    k = counts.sum()
    if k < 2:
        raise ValueError("need at least 2 shots per setting")
    p = counts / k
    raw = (1 << n_sub) * _hamming_kernel_product(p, n_sub)
    if not unbiased:
        return raw
    return k / (k - 1) * raw - (1 << n_sub) / (k - 1)


def renyi2_randomized(sample_sets, n_sub: int, unbiased: bool = True) -> dict:
    """Purity and Renyi-2 (bits) from per-setting subsystem samples.

    Each entry is a SampleSet over ``n_sub`` bits or a raw histogram of length ``2^n_sub``.
    """
    if len(sample_sets) < 1:
        raise ValueError("need at least one measurement setting")
    ests = []
    for s in sample_sets:
        if hasattr(s, "counts"):
            if s.n_q != n_sub:
                raise ValueError(f"sample set over {s.n_q} bits, expected subsystem of {n_sub}")
            h = np.zeros(1 << n_sub)
            for bits, c in s.counts.items():
                h[bits] += c
        else:
            h = np.asarray(s, dtype=float)
            if h.shape != (1 << n_sub,):
                raise ValueError(f"histogram length {h.shape} does not match 2^{n_sub}")
        ests.append(purity_from_counts(h, n_sub, unbiased))
    p = float(np.mean(ests))
    return {"purity": p, "renyi2_bits": -math.log2(p) if p > 0 else math.inf,
            "per_setting": ests, "stderr": float(np.std(ests, ddof=1) / math.sqrt(len(ests))) if len(ests) > 1 else math.nan}


def randomized_measurements(psi: StateVector, subsystem, n_settings: int, shots: int, seed: int) -> list:
    """Emulate uniform random single-qubit Clifford settings and Z readout on ``subsystem``.

    Returns one outcome histogram per setting; setting ``k`` uses the stream ``(seed, k)``.
    """
    rho = reduced_density_matrix(psi, subsystem)
    n = len(set(subsystem))
    cl = clifford_group()
    out = []
    for k in range(n_settings):
        rng = np.random.default_rng([seed, k])
        us = cl[rng.integers(0, len(cl), size=n)]
        p = rotated_probabilities(rho, list(us))
        out.append(rng.multinomial(shots, p / p.sum()).astype(float))
    return out
