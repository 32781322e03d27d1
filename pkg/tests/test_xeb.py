import math

import numpy as np
import pytest

from xysim import xeb
from xysim.lattice import StateVector, enumerate_sector


def _uniform_state(basis):
    return StateVector(basis, np.full(basis.dim, 1 / math.sqrt(basis.dim), complex))


def test_sampleset_merges_and_roundtrips():
    s = xeb.SampleSet(4, 2, [5, 3, 5, 6], [1, 2, 3, 0], seed=9)
    assert list(s.bits) == [3, 5] and list(s.mult) == [2, 4]
    t = xeb.SampleSet.loads(s.dumps())
    assert t.counts == s.counts and t.m == 2 and t.seed == 9 and t.n_q == 4
    assert "0101 4" in s.dumps()
    assert s.in_sector()
    with pytest.raises(ValueError):
        xeb.SampleSet.loads(s.dumps().replace("# M=6", "# M=7"))
    with pytest.raises(ValueError):
        xeb.SampleSet(4, 2, [1, 2], [1])


def test_sampling_is_seeded_and_in_sector(rng):
    psi = StateVector.random(enumerate_sector(10, 4), rng)
    a, b = xeb.sample(psi, 5000, 3), xeb.sample(psi, 5000, 3)
    assert a.counts == b.counts and a.total == 5000 and a.in_sector()
    assert xeb.sample(psi, 5000, 4).counts != a.counts
    assert xeb.sample(psi, 0, 1).total == 0


def test_sampling_frequencies(rng):
    basis = enumerate_sector(6, 2)
    psi = StateVector.random(basis, rng)
    s = xeb.sample(psi, 200000, 11)
    freq = np.zeros(basis.dim)
    freq[xeb.ranks_of(basis, s.bits)] = s.mult / s.total
    p = psi.probabilities()
    assert np.max(np.abs(freq - p) / np.sqrt(p / s.total + 1e-12)) < 5


def test_ranks_of_flags_off_sector():
    basis = enumerate_sector(5, 2)
    r = xeb.ranks_of(basis, np.array([0b11, 0b111, 0b10000 | 0b1, 1 << 6 | 1]))
    assert r[0] == 0 and r[1] == -1 and r[2] >= 0 and r[3] == -1


def test_self_xeb_limits():
    basis = enumerate_sector(8, 4)
    assert xeb.self_xeb_exact(_uniform_state(basis)) == pytest.approx(0.0, abs=1e-12)
    delta = StateVector.product(basis, int(basis.states[3]))
    assert xeb.self_xeb_exact(delta) == pytest.approx(basis.dim - 1)


def test_unbiased_self_xeb_is_unbiased(rng):
    # average over many independent sample sets vs the exact value
    basis = enumerate_sector(8, 4)
    psi = StateVector.random(basis, rng)
    exact = xeb.self_xeb_exact(psi)
    unb = [xeb.self_xeb_unbiased(xeb.sample(psi, 200, k)) for k in range(400)]
    naive = [xeb.self_xeb_naive(xeb.sample(psi, 200, k)) for k in range(400)]
    se = np.std(unb) / math.sqrt(len(unb))
    assert abs(np.mean(unb) - exact) < 4 * se
    assert np.mean(naive) - exact > 0.25  # (D-1)/M bias
    with pytest.raises(ValueError):
        xeb.self_xeb_unbiased(xeb.SampleSet(8, 4, [15], [1]))


def test_linear_xeb(rng):
    basis = enumerate_sector(10, 5)
    psi = StateVector.random(basis, rng)
    p = psi.probabilities()
    s = xeb.sample(psi, 200000, 2)
    assert xeb.linear_xeb(s, p) == pytest.approx(xeb.self_xeb_exact(p), abs=0.03)
    u = xeb.sample(_uniform_state(basis), 200000, 2)
    assert xeb.linear_xeb(u, p) == pytest.approx(0.0, abs=0.03)
    with pytest.raises(ValueError):
        xeb.linear_xeb(s, p[:-1])


def test_phi_from_selfxeb():
    assert xeb.phi_from_selfxeb(0.25, 1.0) == (0.5, False)
    assert xeb.phi_from_selfxeb(1.2, 1.0) == (1.0, True)
    assert xeb.phi_from_selfxeb(-0.1, 1.0)[0] == 0.0
    with pytest.raises(ValueError):
        xeb.phi_from_selfxeb(0.5, 0.0)


def test_pt_check(rng):
    basis = enumerate_sector(14, 7)
    pt = xeb.pt_check(StateVector.random(basis, rng))
    assert pt.delta < 0.05 and pt.ks < 0.02
    flat = xeb.pt_check(np.full(basis.dim, 1 / basis.dim))
    assert flat.delta == pytest.approx(1.0) and flat.ks > 0.5
    with pytest.raises(ValueError):
        xeb.pt_check(np.array([]))


def test_renormalized_fidelity(rng):
    basis = enumerate_sector(10, 5)
    snaps = [StateVector.random(basis, rng) for _ in range(6)]
    p_avg, n_s = xeb.time_average_probs(snaps)
    assert p_avg.sum() == pytest.approx(1.0)
    assert xeb.renormalized_self_xeb(snaps[0].probabilities(), np.full(basis.dim, 1 / basis.dim)) == \
        pytest.approx(xeb.self_xeb_exact(snaps[0]))
    s = xeb.sample(snaps[0], 200000, 5)
    rf = xeb.renormalized_fidelity(s, snaps[0].probabilities(), p_avg, n_s)
    assert rf.f_tilde == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        xeb.time_average_probs([])


def test_fidelity_fit_planted():
    pts = [(t, n, 0.9 ** n * math.exp(-0.01 * n * t)) for t in (0, 5, 10, 20) for n in (8, 12, 16)]
    fit = xeb.fit_fidelity_ansatz(pts)
    assert fit.valid and fit.F0 == pytest.approx(0.9) and fit.eps == pytest.approx(0.01)
    assert not xeb.fit_fidelity_ansatz(pts[:2]).valid


def test_seed_stream_roundtrip():
    s = xeb.SampleSet(3, 1, [1, 2], [3, 4], seed=[5, 0, 2])
    assert xeb.SampleSet.loads(s.dumps()).seed == [5, 0, 2]
    assert "# seed=5,0,2" in s.dumps()
