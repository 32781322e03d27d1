"""Rectangular lattice geometry and fixed-excitation-number bases.

Bit ``i`` of a bitstring is the occupation of site ``i``. A sector basis lists
all weight-``m`` bitstrings in ascending integer order, which is exactly the
order of the combinatorial number system, so ``rank`` needs no lookup table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MAX_QUBITS = 64
# Sectors up to this size keep an explicit state table for the kernels.
MATERIALIZE_LIMIT = 1 << 28


@dataclass(frozen=True)
class Lattice:
    """Open-boundary ``lx`` x ``ly`` grid. Site ids are row-major: ``id = x + lx * y``."""

    lx: int
    ly: int
    sites: tuple
    bonds: tuple
    plaquettes: tuple
    triples: tuple
    sublattice_parity: np.ndarray = field(repr=False, compare=False)

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def site_id(self, x: int, y: int) -> int:
        return x + self.lx * y

    def ordered_triples(self) -> list:
        """Both orientations of every connected triple, ``(i, j, k)`` and ``(k, j, i)``."""
        out = []
        for i, j, k in self.triples:
            out.append((i, j, k))
            out.append((k, j, i))
        return out

    def neighbors(self, i: int) -> list:
        return [b if a == i else a for a, b in self.bonds if i in (a, b)]

    def shortest_direction_cut(self) -> list:
        """Left half of the sites, cut across the longer side.

        With ``L_x <= L_y`` the left part holds all sites with
        ``x + y * L_x < floor(N / 2)``; for ``lx > ly`` the roles of the axes
        are swapped.
        """
        n = self.n_sites
        half = n // 2
        if self.lx <= self.ly:
            return sorted(self.site_id(x, y) for y in range(self.ly) for x in range(self.lx)
                          if x + y * self.lx < half)
        return sorted(self.site_id(x, y) for x in range(self.lx) for y in range(self.ly)
                      if y + x * self.ly < half)

    def geometry_block(self) -> str:
        return f"lattice.lx={self.lx}\nlattice.ly={self.ly}\n"


def build_rect_lattice(lx: int, ly: int) -> Lattice:
    if int(lx) != lx or int(ly) != ly or lx < 1 or ly < 1:
        raise ValueError(f"lattice dimensions must be positive integers, got lx={lx}, ly={ly}")
    lx, ly = int(lx), int(ly)
    if lx * ly > MAX_QUBITS:
        raise ValueError(f"{lx}x{ly} lattice exceeds the {MAX_QUBITS}-site limit")

    def sid(x, y):
        return x + lx * y

    sites = tuple((x, y) for y in range(ly) for x in range(lx))
    bonds = []
    for y in range(ly):
        for x in range(lx):
            if x + 1 < lx:
                bonds.append((sid(x, y), sid(x + 1, y)))
            if y + 1 < ly:
                bonds.append((sid(x, y), sid(x, y + 1)))
    # counterclockwise from the lower-left corner
    plaquettes = tuple(
        (sid(x, y), sid(x + 1, y), sid(x + 1, y + 1), sid(x, y + 1))
        for y in range(ly - 1) for x in range(lx - 1)
    )
    adj = [[] for _ in range(lx * ly)]
    for a, b in bonds:
        adj[a].append(b)
        adj[b].append(a)
    triples = []
    for j in range(lx * ly):
        nb = sorted(adj[j])
        for p in range(len(nb)):
            for q in range(p + 1, len(nb)):
                triples.append((nb[p], j, nb[q]))
    triples.sort()
    parity = np.array([(-1) ** (x + y) for x, y in sites], dtype=np.int8)
    return Lattice(lx, ly, sites, tuple(bonds), plaquettes, tuple(triples), parity)


def popcount(x: int) -> int:
    return bin(x).count("1")


def _chunk_width(n_q: int) -> int:
    if n_q <= 32:
        return max(1, (n_q + 1) // 2)
    return 8


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """All ``n_q``-bit strings with Hamming weight ``m``, ascending by integer value."""

    n_q: int
    m: int

    def __post_init__(self):
        if not (0 <= self.n_q <= MAX_QUBITS):
            raise ValueError(f"n_q={self.n_q} outside [0, {MAX_QUBITS}]")
        if not (0 <= self.m <= self.n_q):
            raise ValueError(f"excitation number m={self.m} outside [0, n_q={self.n_q}]")
        if math.comb(self.n_q, self.m) > np.iinfo(np.int64).max:
            raise ValueError("sector dimension exceeds the int64 address space")

    @property
    def dim(self) -> int:
        return math.comb(self.n_q, self.m)

    @property
    def materializable(self) -> bool:
        return self.dim <= MATERIALIZE_LIMIT

    def __eq__(self, other):
        return isinstance(other, SectorBasis) and (self.n_q, self.m) == (other.n_q, other.m)

    def __hash__(self):
        return hash((self.n_q, self.m))

    def rank(self, bits: int) -> int:
        bits = int(bits)
        if bits < 0 or bits >> self.n_q:
            raise ValueError(f"bitstring {bits:#x} has bits beyond n_q={self.n_q}")
        if popcount(bits) != self.m:
            raise ValueError(f"bitstring {bits:0{self.n_q}b} has weight {popcount(bits)}, sector needs {self.m}")
        r, k = 0, 0
        while bits:
            low = bits & -bits
            pos = low.bit_length() - 1
            k += 1
            r += math.comb(pos, k)
            bits ^= low
        return r

    def unrank(self, index: int) -> int:
        index = int(index)
        if not (0 <= index < self.dim):
            raise IndexError(f"index {index} outside sector of dimension {self.dim}")
        bits = 0
        pos = self.n_q
        for k in range(self.m, 0, -1):
            # largest pos with comb(pos, k) <= index
            pos -= 1
            while math.comb(pos, k) > index:
                pos -= 1
            index -= math.comb(pos, k)
            bits |= 1 << pos
        return bits

    @cached_property
    def states(self) -> np.ndarray:
        """Explicit sorted table of member bitstrings (int64 view of the 64-bit pattern)."""
        if not self.materializable:
            raise MemoryError(
                f"sector C({self.n_q},{self.m}) = {self.dim} exceeds the materialization limit {MATERIALIZE_LIMIT}"
            )
        from . import _kernels

        return _kernels.enumerate_states(self.n_q, self.m, self.dim)

    @cached_property
    def rank_tables(self):
        """Per-chunk partial ranks: ``tables[c, w, x]`` for chunk ``c`` holding bits ``x`` above ``w`` set bits."""
        width = _chunk_width(self.n_q)
        nchunks = max(1, -(-self.n_q // width))
        tables = np.zeros((nchunks, self.m + 1, 1 << width), dtype=np.int64)
        for c in range(nchunks):
            base = c * width
            nbits = min(width, self.n_q - base)
            for x in range(1 << nbits):
                positions = [base + p for p in range(nbits) if (x >> p) & 1]
                for w in range(self.m + 1):
                    if w + len(positions) > self.m:
                        continue
                    tables[c, w, x] = sum(math.comb(pos, w + k + 1) for k, pos in enumerate(positions))
        return tables, width, nchunks

    def bitstring(self, bits: int) -> str:
        """Binary string, site 0 rightmost."""
        return format(int(bits), f"0{self.n_q}b")


def enumerate_sector(n_q: int, m: int) -> SectorBasis:
    return SectorBasis(int(n_q), int(m))


@dataclass
class StateVector:
    basis: SectorBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (self.basis.dim,):
            raise ValueError(f"amplitude length {self.amplitudes.shape} != sector dimension {self.basis.dim}")

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy())

    @classmethod
    def product(cls, basis: SectorBasis, bits: int) -> "StateVector":
        amp = np.zeros(basis.dim, dtype=np.complex128)
        amp[basis.rank(bits)] = 1.0
        return cls(basis, amp)

    @classmethod
    def random(cls, basis: SectorBasis, rng: np.random.Generator) -> "StateVector":
        """Normalized complex Gaussian state."""
        amp = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
        amp /= np.linalg.norm(amp)
        return cls(basis, amp)


def neel_bits(lat: Lattice, occupied_parity: int = -1) -> int:
    """Checkerboard product state occupying sites whose sublattice parity equals ``occupied_parity``."""
    bits = 0
    for i, p in enumerate(lat.sublattice_parity):
        if p == occupied_parity:
            bits |= 1 << i
    return bits
