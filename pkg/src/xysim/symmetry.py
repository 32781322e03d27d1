"""Point-group reduction of a sector to its fully symmetric subspace.

A symmetric basis state is the normalized orbit sum ``|r~> = |O_r|^{-1/2} sum_{s in O_r} |s>``
over the images of a representative ``r`` (the smallest bitstring of its orbit).
For an invariant Hamiltonian, ``<t~|H|r~> = sqrt(|O_t| / |O_r|) sum_{s in O_r} <t|H|s>``,
so each row applies ``H`` to its representative and folds targets onto orbits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .hamiltonian import SectorOperator, SpinHamiltonian, register_operator_factory
from .lattice import Lattice, SectorBasis, StateVector, enumerate_sector, popcount


def lattice_symmetries(lat: Lattice) -> list:
    """Site permutations of the rectangle's point group (8 for squares, 4 otherwise), identity first."""
    lx, ly = lat.lx, lat.ly
    maps = [lambda x, y: (x, y), lambda x, y: (lx - 1 - x, y), lambda x, y: (x, ly - 1 - y),
            lambda x, y: (lx - 1 - x, ly - 1 - y)]
    if lx == ly:
        maps += [lambda x, y: (y, x), lambda x, y: (ly - 1 - y, x), lambda x, y: (y, lx - 1 - x),
                 lambda x, y: (ly - 1 - y, lx - 1 - x)]
    out = []
    for f in maps:
        p = tuple(lat.site_id(*f(x, y)) for x, y in lat.sites)
        if p not in out:
            out.append(p)
    return [np.array(p, dtype=np.int64) for p in out]


def _permute_bits(bits: int, perm) -> int:
    out = 0
    for i, j in enumerate(perm):
        if (bits >> i) & 1:
            out |= 1 << int(j)
    return out


def _invariant(perm, lat: Lattice, h: SpinHamiltonian) -> bool:
    if not np.array_equal(h.onsite[perm], h.onsite):
        return False
    bond_idx = {tuple(sorted(b)): n for n, b in enumerate(lat.bonds)}
    for n, (a, b) in enumerate(lat.bonds):
        m = bond_idx.get(tuple(sorted((int(perm[a]), int(perm[b])))))
        if m is None or h.hop[m] != h.hop[n] or h.nn_density[m] != h.nn_density[n]:
            return False
    tri_idx = {t: n for n, t in enumerate(lat.triples)}
    for n, (i, j, k) in enumerate(lat.triples):
        a, c = sorted((int(perm[i]), int(perm[k])))
        m = tri_idx.get((a, int(perm[j]), c))
        if m is None or (h.xnx[m], h.xix[m], h.nxx[m]) != (h.xnx[n], h.xix[n], h.nxx[n]):
            return False
    return True


def invariant_group(lat: Lattice, hamiltonians, bits: int, onsite_vectors=()) -> np.ndarray:
    """Point-group elements fixing ``bits``, every Hamiltonian and every extra on-site profile.

    The result is closed under composition because each condition is.
    """
    keep = []
    for p in lattice_symmetries(lat):
        if _permute_bits(bits, p) != bits:
            continue
        if any(not np.array_equal(np.asarray(v)[p], np.asarray(v)) for v in onsite_vectors):
            continue
        if all(_invariant(p, lat, h) for h in hamiltonians):
            keep.append(p)
    return np.array(keep, dtype=np.int64).reshape(len(keep), lat.n_sites)


@dataclass(frozen=True, eq=False)
class SymmetricBasis:
    """Fully symmetric subspace of a weight-``m`` sector under a permutation group."""

    n_q: int
    m: int
    perms: np.ndarray = field(repr=False)

    @cached_property
    def full(self) -> SectorBasis:
        return enumerate_sector(self.n_q, self.m)

    @cached_property
    def _orbits(self):
        is_rep, orbit = _kernels.orbit_scan(self.full.states, self.perms)
        return self.full.states[is_rep], orbit[is_rep]

    @property
    def states(self) -> np.ndarray:
        return self._orbits[0]

    @property
    def orbit_sizes(self) -> np.ndarray:
        return self._orbits[1]

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def order(self) -> int:
        return len(self.perms)

    @property
    def key(self) -> tuple:
        return (self.n_q, self.m, self.perms.tobytes())

    def __eq__(self, other):
        return isinstance(other, SymmetricBasis) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def rank(self, bits: int) -> int:
        c = min(_permute_bits(int(bits), p) for p in self.perms)
        r = int(np.searchsorted(self.states, c))
        if r >= self.dim or self.states[r] != c:
            raise ValueError(f"bitstring {bits:#x} not in the sector")
        return r

    def expand(self, psi: StateVector) -> StateVector:
        return StateVector(self.full, _kernels.orbit_expand(self.full.states, self.states, self.orbit_sizes,
                                                           self.perms, psi.amplitudes))

    def project(self, psi: StateVector) -> StateVector:
        """Orthogonal projection of a full-sector state onto the symmetric subspace."""
        return StateVector(self, _kernels.orbit_project(self.full.states, self.states, self.orbit_sizes,
                                                        self.perms, psi.amplitudes))


def symmetric_basis(lat: Lattice, hamiltonians, bits: int, onsite_vectors=()) -> SymmetricBasis | None:
    """Symmetric basis for evolving ``bits`` under ``hamiltonians``, or None if only the identity survives."""
    g = invariant_group(lat, hamiltonians, bits, onsite_vectors)
    if len(g) <= 1:
        return None
    return SymmetricBasis(lat.n_sites, popcount(bits), g)


class SymmetricOperator(SectorOperator):
    """:class:`SectorOperator` on a :class:`SymmetricBasis`; coefficients must be group invariant."""

    def __init__(self, lattice: Lattice, basis: SymmetricBasis, with_three: bool):
        self.lattice = lattice
        self.basis = basis
        self.with_three = with_three
        b = np.asarray(lattice.bonds, dtype=np.int64).reshape(-1, 2)
        t = np.asarray(lattice.triples, dtype=np.int64).reshape(-1, 3)
        self._bi, self._bj = b[:, 0].copy(), b[:, 1].copy()
        self._ti, self._tj, self._tk = t[:, 0].copy(), t[:, 1].copy(), t[:, 2].copy()
        reps = basis.states
        full = basis.full
        tables, width, nchunks = full.rank_tables
        counts = _kernels.count_moves(reps, self._bi, self._bj, self._ti, self._tj, self._tk, with_three)
        self.indptr = np.cumsum(counts)
        nnz = int(self.indptr[-1])
        cols = np.empty(nnz, dtype=np.int64)
        self.kinds = np.empty(nnz, dtype=np.int16)
        _kernels.fill_moves(reps, tables, width, nchunks, self._bi, self._bj, self._ti, self._tj,
                            self._tk, with_three, self.indptr, cols, self.kinds)
        self.weights = np.empty(nnz)
        _kernels.symmetrize_moves(self.indptr, cols, full.states, reps, basis.orbit_sizes, basis.perms,
                                  self.weights)
        self.cols = cols.astype(np.int32)

    def apply(self, coef, diag, amp, out):
        _kernels.csr_apply_weighted(self.indptr, self.cols, self.kinds, self.weights, coef, diag, amp, out)
        return out


register_operator_factory(SymmetricBasis, SymmetricOperator)
