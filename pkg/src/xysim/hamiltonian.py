"""Projected spin Hamiltonian, ramp schedules and matrix-free application.

Units: angular frequency in rad/ns, time in ns. ``mhz_to_rad_ns`` converts the
``g / 2pi`` values quoted in MHz.

Term families (sums over ``Lattice.bonds`` and canonical ``Lattice.triples``):

    onsite        w_i n_i
    hop           g_ij (X_i X_j + Y_i Y_j) / 2
    nn_density    g^nn_ij n_i n_j
    three_site    (g^XnX_ijk n_j + g^XIX_ijk) (X_i X_k + Y_i Y_k) / 2
    three_site    g^nXX_ijk [n_i (X_j X_k + Y_j Y_k) / 2 + n_k (X_j X_i + Y_j Y_i) / 2]

Triples are stored once with ``i < k``; the XnX/XIX term is symmetric under
``i <-> k`` so a single copy carries the full coefficient. The nXX term is not
symmetric, so one stored coefficient drives both orientations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .lattice import Lattice, StateVector

TWO_PI = 2.0 * math.pi


def mhz_to_rad_ns(f_mhz: float) -> float:
    return TWO_PI * f_mhz * 1e-3


@dataclass
class SpinHamiltonian:
    lattice: Lattice
    onsite: np.ndarray
    hop: np.ndarray
    nn_density: np.ndarray
    xnx: np.ndarray
    xix: np.ndarray
    nxx: np.ndarray

    def __post_init__(self):
        lat = self.lattice
        self.onsite = _real_array(self.onsite, lat.n_sites, "onsite")
        self.hop = _real_array(self.hop, lat.n_bonds, "hop")
        self.nn_density = _real_array(self.nn_density, lat.n_bonds, "nn_density")
        nt = len(lat.triples)
        self.xnx = _real_array(self.xnx, nt, "xnx")
        self.xix = _real_array(self.xix, nt, "xix")
        self.nxx = _real_array(self.nxx, nt, "nxx")

    @classmethod
    def zeros(cls, lat: Lattice) -> "SpinHamiltonian":
        nt = len(lat.triples)
        return cls(lat, np.zeros(lat.n_sites), np.zeros(lat.n_bonds), np.zeros(lat.n_bonds),
                   np.zeros(nt), np.zeros(nt), np.zeros(nt))

    @classmethod
    def xy(cls, lat: Lattice, g: float, onsite=None) -> "SpinHamiltonian":
        h = cls.zeros(lat)
        h.hop[:] = g
        if onsite is not None:
            h.onsite[:] = onsite
        return h

    @property
    def has_three_site(self) -> bool:
        return bool(np.any(self.xnx) or np.any(self.xix) or np.any(self.nxx))

    def scaled(self, onsite_scale=1.0, coupling_scale=1.0) -> "SpinHamiltonian":
        return replace(
            self,
            onsite=self.onsite * onsite_scale,
            hop=self.hop * coupling_scale,
            nn_density=self.nn_density * coupling_scale,
            xnx=self.xnx * coupling_scale,
            xix=self.xix * coupling_scale,
            nxx=self.nxx * coupling_scale,
        )

    def gauge_flipped(self) -> "SpinHamiltonian":
        """Overall sign flip, mapping the ferromagnetic frame onto the antiferromagnetic one.

        ``H -> -H`` leaves every real-valued Z/XX/YY observable of the evolved
        state unchanged (the evolved state is complex-conjugated).
        """
        return self.scaled(-1.0, -1.0)

    def term_table(self) -> str:
        """Tab-separated dump: ``kind  sites  coefficient`` with sites joined by commas."""
        lat = self.lattice
        rows = ["kind\tsites\tcoefficient"]
        for i, w in enumerate(self.onsite):
            rows.append(f"onsite\t{i}\t{w!r}")
        for (a, b), g, gnn in zip(lat.bonds, self.hop, self.nn_density):
            rows.append(f"hop\t{a},{b}\t{g!r}")
            rows.append(f"nn\t{a},{b}\t{gnn!r}")
        for (i, j, k), a, b, c in zip(lat.triples, self.xnx, self.xix, self.nxx):
            rows.append(f"xnx\t{i},{j},{k}\t{a!r}")
            rows.append(f"xix\t{i},{j},{k}\t{b!r}")
            rows.append(f"nxx\t{i},{j},{k}\t{c!r}")
        return "\n".join(rows) + "\n"

    def kernel_args(self):
        lat = self.lattice
        b = np.asarray(lat.bonds, dtype=np.int64).reshape(-1, 2)
        t = np.asarray(lat.triples, dtype=np.int64).reshape(-1, 3)
        if not self.has_three_site:
            t = t[:0]
        nt = t.shape[0]
        return (self.onsite, b[:, 0].copy(), b[:, 1].copy(), self.hop, self.nn_density,
                t[:, 0].copy(), t[:, 1].copy(), t[:, 2].copy(),
                self.xnx[:nt], self.xix[:nt], self.nxx[:nt])


def _real_array(a, n, name):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        if np.any(np.imag(a) != 0):
            raise ValueError(f"{name} coefficients must be real")
        a = np.real(a)
    a = np.array(a, dtype=np.float64).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} has {a.shape[0]} entries, lattice needs {n}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} coefficients must be finite")
    return a


@dataclass
class XYEnergyObservable:
    """Pure hopping sum ``H_XY = sum_<ij> (X_i X_j + Y_i Y_j) / 2`` with unit couplings."""

    lattice: Lattice
    g_m: float = 1.0

    @property
    def n_bonds(self) -> int:
        return self.lattice.n_bonds

    def as_hamiltonian(self) -> SpinHamiltonian:
        return SpinHamiltonian.xy(self.lattice, 1.0)


def _check_basis(h: SpinHamiltonian, psi: StateVector):
    if psi.basis.n_q != h.lattice.n_sites:
        raise ValueError(f"state has {psi.basis.n_q} qubits, Hamiltonian acts on {h.lattice.n_sites}")


class SectorOperator:
    """Cached hopping-graph connectivity of a lattice inside one sector.

    Built once per (lattice, sector, three-site flag); any Hamiltonian on that
    lattice then applies as a diagonal plus a gather over the stored moves.
    """

    def __init__(self, lattice: Lattice, basis, with_three: bool):
        self.lattice = lattice
        self.basis = basis
        self.with_three = with_three
        b = np.asarray(lattice.bonds, dtype=np.int64).reshape(-1, 2)
        t = np.asarray(lattice.triples, dtype=np.int64).reshape(-1, 3)
        self._bi, self._bj = b[:, 0].copy(), b[:, 1].copy()
        self._ti, self._tj, self._tk = t[:, 0].copy(), t[:, 1].copy(), t[:, 2].copy()
        states = basis.states
        tables, width, nchunks = basis.rank_tables
        counts = _kernels.count_moves(states, self._bi, self._bj, self._ti, self._tj, self._tk, with_three)
        self.indptr = np.cumsum(counts)
        nnz = int(self.indptr[-1])
        self.cols = np.empty(nnz, dtype=np.int32 if basis.dim < 2**31 else np.int64)
        self.kinds = np.empty(nnz, dtype=np.int16)
        _kernels.fill_moves(states, tables, width, nchunks, self._bi, self._bj, self._ti, self._tj,
                            self._tk, with_three, self.indptr, self.cols, self.kinds)

    def coef(self, h: SpinHamiltonian) -> np.ndarray:
        nb, nt = len(h.hop), len(h.xnx)
        c = np.zeros(nb + 3 * nt)
        c[:nb] = h.hop
        c[nb:nb + 2 * nt:2] = h.xix
        c[nb + 1:nb + 2 * nt:2] = h.xix + h.xnx
        c[nb + 2 * nt:] = h.nxx
        return c

    def onsite_diag(self, weights) -> np.ndarray:
        return _kernels.occupation_sums(self.basis.states, np.asarray(weights, dtype=float))

    def pair_diag(self, weights) -> np.ndarray:
        return _kernels.pair_occupation_sums(self.basis.states, self._bi, self._bj, np.asarray(weights, dtype=float))

    def diag(self, h: SpinHamiltonian) -> np.ndarray:
        d = self.onsite_diag(h.onsite)
        if np.any(h.nn_density):
            d += self.pair_diag(h.nn_density)
        return d

    def apply(self, coef, diag, amp, out):
        _kernels.csr_apply(self.indptr, self.cols, self.kinds, coef, diag, amp, out)
        return out


_OPERATORS: dict = {}
_FACTORIES: dict = {}


def register_operator_factory(basis_type, factory):
    """Route bases of ``basis_type`` to ``factory(lattice, basis, with_three)``."""
    _FACTORIES[basis_type] = factory


def sector_operator(lattice: Lattice, basis, with_three: bool) -> SectorOperator:
    key = (lattice.lx, lattice.ly, basis.n_q, basis.m, getattr(basis, "key", None))
    op = _OPERATORS.get(key)
    if op is not None and (op.with_three or not with_three):
        return op
    _OPERATORS.clear()
    op = _FACTORIES.get(type(basis), SectorOperator)(lattice, basis, with_three)
    _OPERATORS[key] = op
    return op


def apply_into(h: SpinHamiltonian, basis, amp: np.ndarray, out: np.ndarray, diag=None) -> np.ndarray:
    op = sector_operator(h.lattice, basis, h.has_three_site)
    if diag is None:
        diag = op.diag(h)
    return op.apply(op.coef(h), diag, amp, out)


def apply_direct(h: SpinHamiltonian, basis, amp: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Table-free variant ranking every move on the fly (no connectivity cache)."""
    tables, width, nchunks = basis.rank_tables
    _kernels.apply_h(basis.states, tables, width, nchunks, amp, out, *h.kernel_args())
    return out


def apply(h, psi: StateVector) -> StateVector:
    if isinstance(h, XYEnergyObservable):
        h = h.as_hamiltonian()
    _check_basis(h, psi)
    out = np.empty_like(psi.amplitudes)
    apply_into(h, psi.basis, psi.amplitudes, out)
    return StateVector(psi.basis, out)


def expectation(h, psi: StateVector) -> float:
    hpsi = apply(h, psi)
    val = np.sum(np.conj(psi.amplitudes) * hpsi.amplitudes)
    scale = max(1.0, abs(val.real))
    if abs(val.imag) > 1e-8 * scale:
        raise ArithmeticError(f"expectation has imaginary part {val.imag:.3e}; operator is not Hermitian")
    return float(val.real)


def diagonal(h: SpinHamiltonian, basis) -> np.ndarray:
    return sector_operator(h.lattice, basis, h.has_three_site).diag(h)


def _sum_extreme(values, count, largest):
    if count <= 0:
        return 0.0
    v = np.sort(values)
    return float(v[-count:].sum() if largest else v[:count].sum())


def bandwidth_bound(h: SpinHamiltonian, m: int) -> tuple:
    """Gershgorin interval containing the spectrum of ``h`` in the weight-``m`` sector.

    Diagonal extremes and the maximal off-diagonal row sum are bounded from
    per-site/per-bond data without touching the basis.
    """
    lat = h.lattice
    n = lat.n_sites
    nn = h.nn_density
    d_max = _sum_extreme(h.onsite, m, True) + float(np.clip(nn, 0, None).sum()) if m >= 2 else _sum_extreme(h.onsite, m, True)
    d_min = _sum_extreme(h.onsite, m, False) + float(np.clip(nn, None, 0).sum()) if m >= 2 else _sum_extreme(h.onsite, m, False)

    # every active move involves one occupied and one empty site; per-site weights
    site_w = np.zeros(n)
    for (a, b), g in zip(lat.bonds, h.hop):
        site_w[a] += abs(g)
        site_w[b] += abs(g)
    for (i, j, k), a, b, c in zip(lat.triples, h.xnx, h.xix, h.nxx):
        w3 = max(abs(b), abs(a + b))
        site_w[i] += w3
        site_w[k] += w3
        # nXX moves excitations between j and one of its outer neighbours
        site_w[j] += 2 * abs(c)
        site_w[i] += abs(c)
        site_w[k] += abs(c)
    total = 0.5 * site_w.sum()
    row = min(total, _sum_extreme(site_w, m, True), _sum_extreme(site_w, n - m, True))
    return d_min - row, d_max + row


@dataclass
class RampSchedule:
    """Piecewise-linear ramp of a staggered field ``h`` and coupling ``g``.

    At time ``t`` the on-site terms are ``base.onsite + h(t) * stagger`` and all
    coupling families are ``base_couplings * g(t) / g_reference``.
    """

    base: SpinHamiltonian
    times: np.ndarray
    fields: np.ndarray
    couplings: np.ndarray
    g_reference: float
    stagger: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.fields = np.asarray(self.fields, dtype=float)
        self.couplings = np.asarray(self.couplings, dtype=float)
        if not (self.times.shape == self.fields.shape == self.couplings.shape) or self.times.size < 1:
            raise ValueError("waypoint arrays must be nonempty and equal length")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("waypoint times must be nondecreasing")
        if self.g_reference == 0:
            raise ValueError("g_reference must be nonzero")
        if self.stagger is None:
            self.stagger = self.base.lattice.sublattice_parity.astype(float)
        self.stagger = np.asarray(self.stagger, dtype=float)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def field_and_coupling(self, t: float) -> tuple:
        if not (self.t_start - 1e-12 <= t <= self.t_end + 1e-12):
            raise ValueError(f"t={t} outside schedule domain [{self.t_start}, {self.t_end}]")
        if self.times.size == 1 or t >= self.t_end:
            return float(self.fields[-1]), float(self.couplings[-1])
        if t <= self.t_start:
            return float(self.fields[0]), float(self.couplings[0])
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        t0, t1 = self.times[k], self.times[k + 1]
        if t1 == t0:
            return float(self.fields[k + 1]), float(self.couplings[k + 1])
        a = (t - t0) / (t1 - t0)
        hf = (1 - a) * self.fields[k] + a * self.fields[k + 1]
        gc = (1 - a) * self.couplings[k] + a * self.couplings[k + 1]
        return float(hf), float(gc)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.times)


def schedule_eval(s: RampSchedule, t: float) -> SpinHamiltonian:
    hf, gc = s.field_and_coupling(t)
    h = s.base.scaled(1.0, gc / s.g_reference)
    h.onsite = s.base.onsite + hf * s.stagger
    return h


def kz_schedule(lat: Lattice, t_r: float, h_mhz: float = 30.0, gm_mhz: float = 20.0,
                base: SpinHamiltonian | None = None) -> RampSchedule:
    """Linear ramp of the staggered field ``h -> 0`` while the coupling turns on ``0 -> g_m``."""
    gm = mhz_to_rad_ns(gm_mhz)
    if base is None:
        base = SpinHamiltonian.xy(lat, gm)
    return RampSchedule(base, [0.0, t_r], [mhz_to_rad_ns(h_mhz), 0.0], [0.0, gm], g_reference=gm)


def coupling_ramp(h: SpinHamiltonian, duration: float, g_reference: float) -> RampSchedule:
    """Couplings of ``h`` ramped linearly from zero over ``duration``; on-site terms held fixed."""
    return RampSchedule(h, [0.0, duration], [0.0, 0.0], [0.0, g_reference], g_reference=g_reference)


def disordered_xy(lat: Lattice, g: float, width: float, rng: np.random.Generator,
                  xnx_frac: float = 0.0, xix_frac: float = 0.0, nxx_frac: float = 0.0,
                  nn_frac: float = 0.0) -> SpinHamiltonian:
    """Uniform coupling ``g`` with on-site disorder drawn uniformly from ``[-width, width]``."""
    h = SpinHamiltonian.xy(lat, g, onsite=rng.uniform(-width, width, size=lat.n_sites))
    h.nn_density[:] = nn_frac * g
    h.xnx[:] = xnx_frac * g
    h.xix[:] = xix_frac * g
    h.nxx[:] = nxx_frac * g
    return h


def dense_matrix(h: SpinHamiltonian, basis) -> np.ndarray:
    """Dense sector matrix built column by column from ``apply`` (small systems only)."""
    dim = basis.dim
    out = np.zeros((dim, dim), dtype=np.complex128)
    e = np.zeros(dim, dtype=np.complex128)
    col = np.empty(dim, dtype=np.complex128)
    for c in range(dim):
        e[:] = 0
        e[c] = 1
        apply_into(h, basis, e, col)
        out[:, c] = col
    return out
