import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xysim.lattice import SectorBasis, StateVector, build_rect_lattice, enumerate_sector, neel_bits, popcount


def test_counts_4x4():
    lat = build_rect_lattice(4, 4)
    assert lat.n_sites == 16
    assert lat.n_bonds == 24
    assert len(lat.plaquettes) == 9
    # every connected path i-j-k with i < k, centred on j
    deg = [len(lat.neighbors(j)) for j in range(16)]
    assert len(lat.triples) == sum(d * (d - 1) // 2 for d in deg)
    assert all(i < k for i, _, k in lat.triples)


def test_plaquettes_counterclockwise():
    lat = build_rect_lattice(3, 3)
    for p in lat.plaquettes:
        xy = [lat.sites[i] for i in p]
        area = sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(xy, xy[1:] + xy[:1]))
        assert area > 0


def test_bad_dimensions():
    with pytest.raises(ValueError):
        build_rect_lattice(0, 3)
    with pytest.raises(ValueError):
        build_rect_lattice(9, 8)


def test_sector_states_sorted_and_complete():
    b = enumerate_sector(10, 4)
    s = b.states
    assert len(s) == math.comb(10, 4)
    assert np.all(np.diff(s) > 0)
    assert all(popcount(int(x)) == 4 for x in s)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))), st.data())
def test_rank_unrank_roundtrip(nm, data):
    n, m = nm
    b = SectorBasis(n, m)
    idx = data.draw(st.integers(0, b.dim - 1))
    bits = b.unrank(idx)
    assert popcount(bits) == m
    assert b.rank(bits) == idx


def test_rank_matches_table():
    b = enumerate_sector(12, 5)
    for i in range(0, b.dim, 37):
        assert b.rank(int(b.states[i])) == i


def test_rank_errors():
    b = enumerate_sector(6, 3)
    with pytest.raises(ValueError):
        b.rank(0b1)
    with pytest.raises(ValueError):
        b.rank(1 << 7 | 0b11)
    with pytest.raises(IndexError):
        b.unrank(b.dim)


def test_bitstring_site0_rightmost():
    b = enumerate_sector(5, 1)
    assert b.bitstring(1) == "00001"


def test_neel_checkerboard():
    lat = build_rect_lattice(4, 4)
    bits = neel_bits(lat)
    assert popcount(bits) == 8
    for a, c in lat.bonds:
        assert ((bits >> a) & 1) != ((bits >> c) & 1)


def test_state_vector(rng):
    b = enumerate_sector(8, 4)
    psi = StateVector.random(b, rng)
    assert psi.norm == pytest.approx(1.0)
    assert psi.probabilities().sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        StateVector(b, np.zeros(3))
    e = StateVector.product(b, 0b1111)
    assert e.amplitudes[0] == 1


def test_shortest_direction_cut():
    lat = build_rect_lattice(4, 4)
    assert lat.shortest_direction_cut() == list(range(8))
    lat = build_rect_lattice(4, 2)
    cut = lat.shortest_direction_cut()
    assert len(cut) == 4 and all(lat.sites[i][0] < 2 for i in cut)
