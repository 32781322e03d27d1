import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.special import jv

import dense_oracle as do
from xysim.hamiltonian import (SpinHamiltonian, coupling_ramp, dense_matrix, kz_schedule, mhz_to_rad_ns,
                               schedule_eval)
from xysim.lattice import StateVector, build_rect_lattice, enumerate_sector, neel_bits, popcount
from xysim.propagator import (ChebyshevPlan, ConvergenceError, EvolutionLog, MagnusControl, OdeControl,
                              bessel_j_sequence, evolve_chebyshev, evolve_checkpoints, evolve_ramp,
                              evolve_ramp_magnus, matvec_budget)


@pytest.mark.parametrize("x", [0.3, 5.0, 47.0, 310.0])
def test_bessel_sequence_matches_scipy(x):
    n = int(2 * x) + 40
    j = bessel_j_sequence(n, x)
    ref = jv(np.arange(n + 1), x)
    np.testing.assert_allclose(j, ref, atol=1e-13)


def test_bessel_negative_argument():
    np.testing.assert_allclose(bessel_j_sequence(20, -3.0), jv(np.arange(21), -3.0), atol=1e-14)


def _random_h(lat, rng):
    h = SpinHamiltonian.zeros(lat)
    h.onsite[:] = rng.normal(size=lat.n_sites)
    h.hop[:] = rng.normal(size=lat.n_bonds)
    nt = len(lat.triples)
    h.xnx[:] = 0.1 * rng.normal(size=nt)
    h.nxx[:] = 0.1 * rng.normal(size=nt)
    return h


@pytest.mark.parametrize("t", [0.7, 9.0, -4.0])
def test_chebyshev_matches_dense(t, rng):
    lat = build_rect_lattice(3, 2)
    h = _random_h(lat, rng)
    basis = enumerate_sector(6, 3)
    psi = StateVector.random(basis, rng)
    out = evolve_chebyshev(h, psi, t)
    ref = do.restrict(do.evolve(do.hamiltonian(h), do.embed(psi), t), basis)
    assert np.linalg.norm(out.amplitudes - ref) < 1e-9
    assert abs(out.norm - 1) < 1e-10


def test_chebyshev_zero_time_is_copy(rng):
    lat = build_rect_lattice(2, 2)
    psi = StateVector.random(enumerate_sector(4, 2), rng)
    out = evolve_chebyshev(SpinHamiltonian.xy(lat, 1.0), psi, 0.0)
    np.testing.assert_array_equal(out.amplitudes, psi.amplitudes)
    assert out.amplitudes is not psi.amplitudes


def test_chebyshev_bad_bounds_detected(rng):
    lat = build_rect_lattice(3, 2)
    h = _random_h(lat, rng)
    psi = StateVector.random(enumerate_sector(6, 3), rng)
    with pytest.raises(ConvergenceError):
        evolve_chebyshev(h, psi, 20.0, bounds=(-0.01, 0.01))


def test_tolerance_floor(rng):
    lat = build_rect_lattice(2, 2)
    psi = StateVector.random(enumerate_sector(4, 2), rng)
    with pytest.raises(ValueError):
        evolve_chebyshev(SpinHamiltonian.xy(lat, 1.0), psi, 1.0, tol=1e-14)


def test_checkpoints_compose(rng):
    lat = build_rect_lattice(3, 2)
    h = _random_h(lat, rng)
    psi = StateVector.random(enumerate_sector(6, 3), rng)
    log = EvolutionLog()
    states = evolve_checkpoints(h, psi, [1.0, 2.5, 4.0], log_to=log)
    direct = evolve_chebyshev(h, psi, 4.0)
    assert np.linalg.norm(states[-1].amplitudes - direct.amplitudes) < 1e-9
    assert len(log.rows) == 3 and log.csv().startswith("kind,")
    with pytest.raises(ValueError):
        evolve_checkpoints(h, psi, [2.0, 1.0])


def test_matvec_count_near_m_star(rng):
    lat = build_rect_lattice(3, 3)
    h = SpinHamiltonian.xy(lat, 1.0)
    psi = StateVector.random(enumerate_sector(9, 4), rng)
    from xysim.hamiltonian import bandwidth_bound

    lo, hi = bandwidth_bound(h, 4)
    t = 100.0 / (hi - lo)
    plan = ChebyshevPlan(lo, hi, t)
    _, n = evolve_chebyshev(h, psi, t, bounds=(lo, hi), return_count=True)
    assert matvec_budget(plan) <= n <= 1.5 * plan.m_star


def _dense_ramp(s, psi, basis):
    def f(t, y):
        return -1j * (dense_matrix(schedule_eval(s, t), basis) @ y)

    sol = solve_ivp(f, (s.t_start, s.t_end), psi.amplitudes, method="DOP853", rtol=1e-12, atol=1e-13)
    return sol.y[:, -1]


def test_rk45_ramp_matches_reference_integrator():
    lat = build_rect_lattice(3, 2)
    basis = enumerate_sector(6, 3)
    bits = neel_bits(lat)
    s = kz_schedule(lat, 30.0)
    psi = StateVector.product(basis, bits)
    out = evolve_ramp(s, psi, OdeControl(rtol=1e-11))[-1][1]
    assert np.linalg.norm(out.amplitudes - _dense_ramp(s, psi, basis)) < 1e-8


def test_magnus_fourth_order():
    lat = build_rect_lattice(3, 2)
    basis = enumerate_sector(6, 3)
    s = kz_schedule(lat, 30.0)
    psi = StateVector.product(basis, neel_bits(lat))
    ref = _dense_ramp(s, psi, basis)
    errs = []
    for dt in (4.0, 2.0, 1.0):
        out = evolve_ramp_magnus(s, psi, MagnusControl(max_step=dt, min_steps_per_segment=1))[-1][1]
        errs.append(np.linalg.norm(out.amplitudes - ref))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.5)
    assert errs[-1] < 1e-5


def test_ramp_checkpoints_and_bounds():
    lat = build_rect_lattice(2, 2)
    basis = enumerate_sector(4, 2)
    s = kz_schedule(lat, 10.0)
    psi = StateVector.product(basis, neel_bits(lat))
    out = evolve_ramp(s, psi, checkpoints=[5.0, 10.0])
    assert [t for t, _ in out] == [5.0, 10.0]
    with pytest.raises(ValueError):
        evolve_ramp(s, psi, checkpoints=[11.0])


def test_coupling_ramp_holds_onsite(rng):
    lat = build_rect_lattice(2, 2)
    h = SpinHamiltonian.xy(lat, 0.5, onsite=rng.normal(size=4))
    s = coupling_ramp(h, 6.0, 0.5)
    mid = schedule_eval(s, 3.0)
    np.testing.assert_allclose(mid.onsite, h.onsite)
    np.testing.assert_allclose(mid.hop, 0.25)
