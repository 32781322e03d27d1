import numpy as np
import pytest

from xysim.hamiltonian import SpinHamiltonian, kz_schedule, mhz_to_rad_ns
from xysim.lattice import StateVector, build_rect_lattice, enumerate_sector, neel_bits, popcount
from xysim.propagator import MagnusControl, OdeControl, evolve_chebyshev, evolve_ramp, evolve_ramp_magnus
from xysim.symmetry import invariant_group, lattice_symmetries, symmetric_basis


def _setup(lx, ly):
    lat = build_rect_lattice(lx, ly)
    bits = neel_bits(lat)
    gm = mhz_to_rad_ns(20)
    base = SpinHamiltonian.xy(lat, gm)
    base.xnx[:] = 0.03 * gm
    base.nxx[:] = -0.02 * gm
    base.nn_density[:] = 0.05 * gm
    s = kz_schedule(lat, 25.0, base=base)
    return lat, bits, base, s


def test_group_sizes():
    assert len(lattice_symmetries(build_rect_lattice(4, 4))) == 8
    assert len(lattice_symmetries(build_rect_lattice(3, 4))) == 4
    lat, bits, base, s = _setup(5, 5)
    assert len(invariant_group(lat, [base], bits, [s.stagger])) == 8
    lat, bits, base, s = _setup(4, 4)
    # 90-degree rotations swap the sublattices of an even square
    assert len(invariant_group(lat, [base], bits, [s.stagger])) == 4


def test_disorder_breaks_symmetry(rng):
    lat, bits, base, s = _setup(3, 3)
    base.onsite[:] = rng.normal(size=9)
    assert symmetric_basis(lat, [base], bits, [s.stagger]) is None


@pytest.mark.parametrize("shape", [(3, 3), (4, 4), (5, 3)])
def test_reduced_evolution_matches_full(shape):
    lat, bits, base, s = _setup(*shape)
    sb = symmetric_basis(lat, [base], bits, [s.stagger])
    full = enumerate_sector(lat.n_sites, popcount(bits))
    assert sb.orbit_sizes.sum() == full.dim
    p0 = StateVector.product(full, bits)
    q0 = sb.project(p0)
    np.testing.assert_allclose(sb.expand(q0).amplitudes, p0.amplitudes)
    a = evolve_ramp(s, p0, OdeControl(rtol=1e-11))[-1][1]
    b = sb.expand(evolve_ramp(s, q0, OdeControl(rtol=1e-11))[-1][1])
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-9
    a = evolve_ramp_magnus(s, p0, MagnusControl(max_step=2.0))[-1][1]
    b = sb.expand(evolve_ramp_magnus(s, q0, MagnusControl(max_step=2.0))[-1][1])
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-12
    h = s.base.scaled(1.0, 1.0)
    c = evolve_chebyshev(h, a, 30.0)
    d = sb.expand(evolve_chebyshev(h, sb.project(a), 30.0))
    assert np.linalg.norm(c.amplitudes - d.amplitudes) < 1e-12
