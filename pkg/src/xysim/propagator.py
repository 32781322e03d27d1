"""Time evolution: Chebyshev expansion for constant segments, adaptive RK for ramps."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import SpinHamiltonian, RampSchedule, bandwidth_bound, sector_operator
from .lattice import StateVector

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


def bessel_j_sequence(n_max: int, x: float) -> np.ndarray:
    """``J_0(x) .. J_n_max(x)`` by Miller's backward recurrence.

    Normalized with ``J_0 + 2 sum J_2k = 1``. Stable deep into the ``m >> x`` tail.
    """
    x = float(x)
    out = np.zeros(n_max + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    ax = abs(x)
    start = int(max(n_max, ax) + 20 + 10 * math.sqrt(max(n_max, ax)))
    start += start % 2
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    for k in range(start, 0, -1):
        j_prev = 2.0 * k / ax * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if k - 1 <= n_max:
            out[k - 1] = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
        if abs(j_cur) > 1e250:
            # rescale to avoid overflow; earlier values are negligible
            j_cur *= 1e-250
            j_next *= 1e-250
            out *= 1e-250
            norm *= 1e-250
    norm += j_cur  # J_0 term
    out /= norm
    if x < 0:
        out[1::2] *= -1
    return out


@dataclass
class ChebyshevPlan:
    e_min: float
    e_max: float
    t: float
    tol: float = 1e-10
    coeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.e_max < self.e_min:
            raise ValueError("e_max < e_min")
        if self.e_max == self.e_min:
            self.e_max = self.e_min + 1e-12
        n = self.cap + 1
        self.coeffs = bessel_j_sequence(n, self.tau)

    @property
    def width(self) -> float:
        return self.e_max - self.e_min

    @property
    def center(self) -> float:
        return 0.5 * (self.e_max + self.e_min)

    @property
    def tau(self) -> float:
        return self.t * self.width

    @property
    def m_star(self) -> float:
        return math.e * self.tau / 2.0

    @property
    def cap(self) -> int:
        return int(4 * self.m_star) + 100

    def truncation(self) -> int:
        """Highest order kept: first ``m > m*`` with ``|J_m| < tol/100`` and all later terms smaller."""
        thr = self.tol * 1e-2
        ms = self.m_star
        for m in range(len(self.coeffs)):
            if m > ms and abs(self.coeffs[m]) < thr:
                return m
        raise ConvergenceError(
            f"Bessel coefficients did not fall below {thr:g} within {len(self.coeffs)} terms (tau={self.tau:g})"
        )


def matvec_budget(plan: ChebyshevPlan) -> int:
    return max(1, math.ceil(plan.m_star))


@dataclass
class EvolutionLog:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def csv(self) -> str:
        if not self.rows:
            return ""
        keys = list(self.rows[0])
        lines = [",".join(keys)] + [",".join(str(r[k]) for k in keys) for r in self.rows]
        return "\n".join(lines) + "\n"


def evolve_chebyshev(h: SpinHamiltonian, psi: StateVector, t: float, tol: float = 1e-10,
                     bounds: tuple | None = None, log_to: EvolutionLog | None = None,
                     return_count: bool = False):
    """``exp(-i H t) psi`` by the Chebyshev three-term recurrence on the rescaled generator.

    The generator is ``(H - center) / W``; with ``tau = t W`` the recurrence uses
    ``phi_{m+1} = -2i h phi_m + phi_{m-1}``. Iteration stops once the norm of the
    partial sum is within ``tol`` of one and the Bessel tail is negligible.
    """
    if tol < 1e-12:
        raise ValueError("tol must be >= 1e-12")
    if psi.basis.n_q != h.lattice.n_sites:
        raise ValueError("basis mismatch between state and Hamiltonian")
    if t == 0.0:
        out = psi.copy()
        return (out, 0) if return_count else out
    if bounds is None:
        bounds = bandwidth_bound(h, psi.basis.m)
    plan = ChebyshevPlan(bounds[0], bounds[1], abs(t), tol)
    t0 = time.perf_counter()
    basis = psi.basis
    w, c = plan.width, plan.center
    coeffs = plan.coeffs
    backward = t < 0
    amp0 = psi.amplitudes
    if backward:
        amp0 = np.conj(amp0)

    op = sector_operator(h.lattice, basis, h.has_three_site)
    # rescaled generator (H - c) / W folded into the coefficients
    coef = op.coef(h) / w
    diag = (op.diag(h) - c) / w

    def hhat(v, out):
        return op.apply(coef, diag, v, out)

    prev = amp0.copy()
    cur = np.empty_like(amp0)
    hhat(prev, cur)
    cur *= -1j
    acc = coeffs[0] * prev + 2.0 * coeffs[1] * cur
    matvecs = 1
    nxt = np.empty_like(amp0)
    m_last = plan.truncation()
    m = 1
    while True:
        m += 1
        if m >= len(coeffs):
            raise ConvergenceError(
                f"norm not within {tol:g} of 1 after {len(coeffs)} terms (tau={plan.tau:g}, bound W={w:g})"
            )
        hhat(cur, nxt)
        nxt *= -2j
        nxt += prev
        matvecs += 1
        acc += 2.0 * coeffs[m] * nxt
        prev, cur, nxt = cur, nxt, prev
        if m >= m_last:
            nrm = math.sqrt(float(np.sum(acc.real ** 2 + acc.imag ** 2)))
            if abs(nrm - 1.0) < tol * max(1.0, psi.norm):
                break
    acc *= np.exp(-1j * c * abs(t))
    if backward:
        acc = np.conj(acc)
    if log_to is not None:
        log_to.add(kind="chebyshev", t=t, tau=plan.tau, matvecs=matvecs,
                   wall_s=round(time.perf_counter() - t0, 6))
    out = StateVector(basis, acc)
    return (out, matvecs) if return_count else out


def evolve_checkpoints(h: SpinHamiltonian, psi: StateVector, times, tol: float = 1e-10,
                       bounds: tuple | None = None, log_to: EvolutionLog | None = None) -> list:
    """States at each time in ``times`` (ascending), evolving consecutively between stamps."""
    if bounds is None:
        bounds = bandwidth_bound(h, psi.basis.m)
    out = []
    t_prev = 0.0
    cur = psi
    for t in times:
        if t < t_prev:
            raise ValueError("checkpoint times must be ascending")
        cur = evolve_chebyshev(h, cur, t - t_prev, tol, bounds=bounds, log_to=log_to)
        out.append(cur)
        t_prev = t
    return out


@dataclass
class OdeControl:
    rtol: float = 1e-9
    atol: float = 1e-12
    max_step: float = np.inf
    first_step: float | None = None
    min_step: float = 1e-10
    safety: float = 0.9

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


# Dormand-Prince 5(4)
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def evolve_ramp(s: RampSchedule, psi: StateVector, ctrl: OdeControl | None = None,
                checkpoints=None, log_to: EvolutionLog | None = None) -> list:
    """Integrate ``i d psi/dt = H(t) psi`` over the schedule with adaptive Dormand-Prince steps.

    Returns ``[(t, StateVector), ...]`` at each checkpoint (default: the schedule end).
    Checkpoints and schedule breakpoints are hit exactly by clamping the step.
    Error per step is measured in the state 2-norm.
    """
    ctrl = ctrl or OdeControl()
    if checkpoints is None:
        checkpoints = [s.t_end]
    checkpoints = sorted(float(c) for c in checkpoints)
    for c in checkpoints:
        if not (s.t_start - 1e-12 <= c <= s.t_end + 1e-12):
            raise ValueError(f"checkpoint {c} outside schedule [{s.t_start}, {s.t_end}]")
    basis = psi.basis
    y = psi.amplitudes.copy()
    t = s.t_start
    results = []
    stops = sorted(set(checkpoints) | {float(b) for b in s.breakpoints if s.t_start < b <= s.t_end})
    t0 = time.perf_counter()
    n_rhs = 0
    n_steps = 0

    base = s.base
    op = sector_operator(base.lattice, basis, base.has_three_site)
    d_onsite = op.onsite_diag(base.onsite)
    d_stagger = op.onsite_diag(s.stagger)
    d_pair = op.pair_diag(base.nn_density) if np.any(base.nn_density) else np.zeros(basis.dim)
    coef0 = op.coef(base)
    # Subtract the sector trace (a c-number) from H(t); its phase is restored at checkpoints.
    n, m = basis.n_q, basis.m
    f1 = m / n if n else 0.0
    f2 = m * (m - 1) / (n * (n - 1)) if n > 1 else 0.0
    tr_onsite = f1 * float(base.onsite.sum())
    tr_stagger = f1 * float(s.stagger.sum())
    tr_pair = f2 * float(base.nn_density.sum())
    diag_buf = np.empty(basis.dim)
    tr_pair_on = bool(np.any(base.nn_density))

    def shift(tt):
        hf, gc = s.field_and_coupling(tt)
        r = gc / s.g_reference
        return tr_onsite + hf * tr_stagger + r * tr_pair

    def rhs(tt, v, out):
        nonlocal n_rhs
        n_rhs += 1
        hf, gc = s.field_and_coupling(min(max(tt, s.t_start), s.t_end))
        r = gc / s.g_reference
        d = diag_buf
        np.multiply(d_stagger, hf, out=d)
        np.add(d, d_onsite, out=d)
        if r != 0.0 and tr_pair_on:
            np.add(d, r * d_pair, out=d)
        np.subtract(d, shift(min(max(tt, s.t_start), s.t_end)), out=d)
        op.apply(coef0 * r, d, v, out)
        out *= -1j
        return out

    phase_integral = 0.0

    k = [np.empty_like(y) for _ in range(7)]
    rhs(t, y, k[0])
    h_step = ctrl.first_step
    if h_step is None:
        scale = float(np.linalg.norm(k[0]))
        h_step = 0.01 / scale if scale > 0 else 1.0
    h_step = min(h_step, ctrl.max_step)
    err_prev = 1.0
    ytmp = np.empty_like(y)
    for stop in stops:
        while t < stop - 1e-14 * max(1.0, abs(stop)):
            h = min(h_step, stop - t, ctrl.max_step)
            if h < ctrl.min_step:
                raise ConvergenceError(f"step size underflow (h={h:.3e}) at t={t:.6f} ns")
            for i in range(1, 7):
                np.copyto(ytmp, y)
                for j, a in enumerate(_A[i]):
                    if a != 0.0:
                        ytmp += (h * a) * k[j]
                rhs(t + _C[i] * h, ytmp, k[i])
            # ytmp now holds the 5th-order solution (last stage is FSAL)
            err = np.zeros_like(y)
            for j in range(7):
                if _E[j] != 0.0:
                    err += (h * _E[j]) * k[j]
            y_norm = float(np.linalg.norm(y))
            err_norm = float(np.linalg.norm(err)) / (ctrl.atol + ctrl.rtol * y_norm)
            if err_norm <= 1.0:
                phase_integral += 0.5 * h * (shift(t) + shift(t + h))
                t = t + h
                y, ytmp = ytmp, y
                k[0], k[6] = k[6], k[0]
                n_steps += 1
                # PI step control
                fac = ctrl.safety * err_norm ** (-0.7 / 5) * err_prev ** (0.4 / 5) if err_norm > 0 else 5.0
                fac = min(5.0, max(0.2, fac))
                err_prev = max(err_norm, 1e-4)
                if h >= h_step * 0.999 or fac < 1:
                    h_step = h * fac
            else:
                h_step = h * max(0.2, ctrl.safety * err_norm ** (-1 / 5))
        t = stop
        if stop in checkpoints:
            results.append((stop, _finish(basis, y * np.exp(-1j * phase_integral), stop)))
    if log_to is not None:
        log_to.add(kind="rk45", t=s.t_end - s.t_start, tau=float("nan"), matvecs=n_rhs,
                   wall_s=round(time.perf_counter() - t0, 6))
    log.debug("ramp: %d steps, %d rhs evaluations", n_steps, n_rhs)
    return results


def _finish(basis, y, t):
    nrm = float(np.linalg.norm(y))
    drift = abs(nrm - 1.0)
    if drift >= 1e-8:
        raise ConvergenceError(f"norm drift {drift:.3e} at t={t:.6f} ns exceeds 1e-8")
    return StateVector(basis, y / nrm)


@dataclass
class MagnusControl:
    """Fixed-step commutator-free Magnus (4th order, two exponentials per step)."""

    max_step: float = 1.0
    min_steps_per_segment: int = 4
    tol: float = 1e-10
    spectral_margin: float = 0.02

    def __post_init__(self):
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")


_SQ3 = math.sqrt(3.0)
_CF4_NODES = (0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0)
_CF4_W = ((3.0 - 2.0 * _SQ3) / 12.0, (3.0 + 2.0 * _SQ3) / 12.0)


def _lanczos_extremes(apply_fn, dim, rng, k=40):
    """Extreme Ritz values of a real-symmetric operator from ``k`` Lanczos steps."""
    k = min(k, dim)
    v = rng.normal(size=dim) + 0j
    v /= np.linalg.norm(v)
    v_prev = np.zeros_like(v)
    alpha, beta = [], []
    b = 0.0
    w = np.empty_like(v)
    for _ in range(k):
        apply_fn(v, w)
        a = float(np.vdot(v, w).real)
        w -= a * v + b * v_prev
        alpha.append(a)
        b = float(np.linalg.norm(w))
        if b < 1e-12:
            break
        beta.append(b)
        v_prev, v = v, w / b
        w = np.empty_like(v)
    t = np.diag(alpha) + np.diag(beta[:len(alpha) - 1], 1) + np.diag(beta[:len(alpha) - 1], -1)
    ev = np.linalg.eigvalsh(t)
    return float(ev[0]), float(ev[-1])


def evolve_ramp_magnus(s: RampSchedule, psi: StateVector, ctrl: MagnusControl | None = None,
                       checkpoints=None, log_to: EvolutionLog | None = None, seed: int = 0) -> list:
    """Unitary alternative to :func:`evolve_ramp` for large sectors.

    Each step applies ``exp(-i dt (w1 H(t+c1 dt) + w2 H(t+c2 dt)))`` and its mirror
    via Chebyshev. ``H(t)`` is affine in the (field, coupling) pair, so each
    exponent is itself a schedule Hamiltonian. Spectral bounds come from Weyl's
    inequality over the three affine pieces (diagonal parts exactly, the coupling
    part from Lanczos plus a relative margin); the Chebyshev norm check guards them.
    """
    ctrl = ctrl or MagnusControl()
    if checkpoints is None:
        checkpoints = [s.t_end]
    checkpoints = sorted(float(c) for c in checkpoints)
    basis = psi.basis
    base = s.base
    op = sector_operator(base.lattice, basis, base.has_three_site)
    d_on = op.onsite_diag(base.onsite)
    d_st = op.onsite_diag(s.stagger)
    d_pair = op.pair_diag(base.nn_density) if np.any(base.nn_density) else np.zeros(basis.dim)
    coef0 = op.coef(base)
    c_lo, c_hi = _lanczos_extremes(lambda v, out: op.apply(coef0, d_pair, v, out), basis.dim,
                                   np.random.default_rng(seed))
    pad = ctrl.spectral_margin * max(c_hi - c_lo, 1e-12)
    c_lo, c_hi = c_lo - pad, c_hi + pad
    on_lo, on_hi = float(d_on.min()), float(d_on.max())
    st_lo, st_hi = float(d_st.min()), float(d_st.max())

    def hamiltonian_at(hf, r):
        h = base.scaled(1.0, r)
        h.onsite = base.onsite + hf * s.stagger
        lo = on_lo + (hf * st_lo if hf >= 0 else hf * st_hi) + (r * c_lo if r >= 0 else r * c_hi)
        hi = on_hi + (hf * st_hi if hf >= 0 else hf * st_lo) + (r * c_hi if r >= 0 else r * c_lo)
        return h, (lo, hi)

    stops = sorted(set(checkpoints) | {float(b) for b in s.breakpoints if s.t_start < b <= s.t_end})
    t = s.t_start
    cur = psi.copy()
    results = []
    t0 = time.perf_counter()
    matvecs = 0
    for stop in stops:
        seg = stop - t
        if seg > 0:
            nsteps = max(ctrl.min_steps_per_segment, math.ceil(seg / ctrl.max_step))
            dt = seg / nsteps
            for _ in range(nsteps):
                p1 = s.field_and_coupling(min(t + _CF4_NODES[0] * dt, s.t_end))
                p2 = s.field_and_coupling(min(t + _CF4_NODES[1] * dt, s.t_end))
                for wa, wb in ((_CF4_W[1], _CF4_W[0]), (_CF4_W[0], _CF4_W[1])):
                    # exponent dt*(wa H1 + wb H2) = (dt/2) * H(2 wa p1 + 2 wb p2)
                    hf = 2 * (wa * p1[0] + wb * p2[0])
                    r = 2 * (wa * p1[1] + wb * p2[1]) / s.g_reference
                    h, bounds = hamiltonian_at(hf, r)
                    cur, n = evolve_chebyshev(h, cur, 0.5 * dt, ctrl.tol, bounds=bounds, return_count=True)
                    matvecs += n
                t += dt
        t = stop
        if stop in checkpoints:
            results.append((stop, cur.copy()))
    if log_to is not None:
        log_to.add(kind="magnus4", t=s.t_end - s.t_start, tau=float("nan"), matvecs=matvecs,
                   wall_s=round(time.perf_counter() - t0, 6))
    return results
