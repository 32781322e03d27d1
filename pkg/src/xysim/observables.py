"""Measurement suite on in-sector states: correlations, vortices, currents, energy, transport fits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from . import _kernels
from .hamiltonian import XYEnergyObservable, apply
from .lattice import Lattice, StateVector


def hop_correlations(psi: StateVector) -> np.ndarray:
    """``C[a, b] = <a_a^dag a_b>`` over all site pairs."""
    tables, width, nchunks = psi.basis.rank_tables
    return _kernels.hop_matrix(psi.basis.states, tables, width, nchunks, psi.amplitudes, psi.basis.n_q)


def pauli_string(psi: StateVector, x=(), y=(), z=()) -> complex:
    """``<psi| prod X_x prod Y_y prod Z_z |psi>`` on disjoint site sets."""
    sx, sy, sz = set(x), set(y), set(z)
    if sx & sy or sx & sz or sy & sz:
        raise ValueError("Pauli string site sets must be disjoint")
    mask = lambda s: sum(1 << int(i) for i in s)
    tables, width, nchunks = psi.basis.rank_tables
    return complex(_kernels.pauli_expectation(psi.basis.states, tables, width, nchunks, psi.amplitudes,
                                              np.int64(mask(sx)), np.int64(mask(sy)), np.int64(mask(sz)),
                                              psi.basis.m))


def xx_yy_pair(c: np.ndarray, a: int, b: int) -> float:
    """``<(X_a X_b + Y_a Y_b)/2>`` from the hop matrix."""
    return float(2.0 * c[a, b].real)


def xy_pair(c: np.ndarray, a: int, b: int) -> float:
    """``<X_a Y_b>`` from the hop matrix (sector states only)."""
    return float(2.0 * c[a, b].imag)


@dataclass
class CorrelationReport:
    G_map: dict
    radial: dict
    radial_signed: dict
    xi: float = math.nan
    gamma: float = math.nan
    eps_exp: float = math.nan
    eps_pow: float = math.nan
    fit_valid: bool = False
    fit_range_max: float = 6.0
    parity_corrected: bool = True

    @property
    def residual_ratio(self) -> float:
        return self.eps_pow / self.eps_exp if self.eps_exp > 0 else math.nan

    def csv(self) -> str:
        rows = ["dx,dy,G"]
        rows += [f"{dx},{dy},{v:.12g}" for (dx, dy), v in sorted(self.G_map.items())]
        rows.append("")
        rows.append("r,G_radial_corrected,G_radial_signed")
        rows += [f"{r:.12g},{self.radial[r]:.12g},{self.radial_signed[r]:.12g}" for r in sorted(self.radial)]
        return "\n".join(rows) + "\n"

    def scalars(self) -> dict:
        return {"xi": self.xi, "gamma": self.gamma, "eps_exp": self.eps_exp, "eps_pow": self.eps_pow,
                "eps_ratio": self.residual_ratio, "fit_valid": self.fit_valid}


def two_point(psi: StateVector, lat: Lattice, parity_correction: bool = True,
              fit_range_max: float = 6.0, c: np.ndarray | None = None) -> CorrelationReport:
    """Displacement- and distance-averaged ``<X_iX_j + Y_iY_j>/2``.

    ``G(0)`` is kept in the map as 1/2 (``<X^2 + Y^2>/4``) but never enters the fits.
    The corrected radial curve multiplies by ``(-1)^(dx+dy)`` before binning.
    """
    if c is None:
        c = hop_correlations(psi)
    sums, counts = {}, {}
    for i, (xi, yi) in enumerate(lat.sites):
        for j, (xj, yj) in enumerate(lat.sites):
            key = (xj - xi, yj - yi)
            v = 0.5 if i == j else xx_yy_pair(c, i, j) / 2.0
            sums[key] = sums.get(key, 0.0) + v
            counts[key] = counts.get(key, 0) + 1
    g_map = {k: sums[k] / counts[k] for k in sums}
    rs, rc, rn = {}, {}, {}
    for (dx, dy), v in g_map.items():
        if dx == 0 and dy == 0:
            continue
        r = round(math.hypot(dx, dy), 12)
        sign = (-1) ** (abs(dx) + abs(dy))
        n = counts[(dx, dy)]
        rs[r] = rs.get(r, 0.0) + v * n
        rc[r] = rc.get(r, 0.0) + sign * v * n
        rn[r] = rn.get(r, 0) + n
    radial_signed = {r: rs[r] / rn[r] for r in rs}
    radial_corr = {r: rc[r] / rn[r] for r in rc}
    rep = CorrelationReport(g_map, radial_corr, radial_signed, fit_range_max=fit_range_max,
                            parity_corrected=parity_correction)
    fit = fit_correlation_decay(radial_corr if parity_correction else radial_signed, fit_range_max)
    rep.xi, rep.gamma, rep.eps_exp, rep.eps_pow, rep.fit_valid = fit
    return rep


def fit_correlation_decay(radial: dict, max_r: float = 6.0):
    """Exponential and power-law fits in log space.

    Returns ``(xi, gamma, eps_exp, eps_pow, valid)``; bins with non-positive values are dropped.
    """
    pts = sorted((r, v) for r, v in radial.items() if 0 < r <= max_r + 1e-9 and v > 0)
    if len(pts) < 3:
        return math.nan, math.nan, math.nan, math.nan, False
    r = np.array([p[0] for p in pts])
    lg = np.log([p[1] for p in pts])
    a_exp = np.polyfit(r, lg, 1)
    a_pow = np.polyfit(np.log(r), lg, 1)
    eps_exp = float(np.sqrt(np.mean((np.polyval(a_exp, r) - lg) ** 2)))
    eps_pow = float(np.sqrt(np.mean((np.polyval(a_pow, np.log(r)) - lg) ** 2)))
    xi = -1.0 / a_exp[0] if a_exp[0] < 0 else math.inf
    return float(xi), float(-a_pow[0]), eps_exp, eps_pow, True


def _require_plaquettes(lat: Lattice):
    if not lat.plaquettes:
        raise ValueError(f"{lat.lx}x{lat.ly} lattice has no plaquettes")


def vortex_density(psi: StateVector, lat: Lattice) -> float:
    """Swendsen vortex proxy averaged over plaquettes.

    Per plaquette ``(1 - X1X3 - Y2Y4)(1 - Y1Y3 - X2X4)/4`` expands, using ``X^2 = Y^2 = 1``
    and ``XY = iZ``, into identity, six two-site strings and ``X1X2X3X4``,
    ``Y1Y2Y3Y4``; the ``Z1Z3`` and ``Z2Z4`` cross terms come from ``X1X3*Y1Y3`` products.
    """
    _require_plaquettes(lat)
    total = 0.0
    for p in lat.plaquettes:
        i1, i2, i3, i4 = p
        val = 1.0
        val -= pauli_string(psi, x=(i1, i3)).real + pauli_string(psi, y=(i1, i3)).real
        val -= pauli_string(psi, x=(i2, i4)).real + pauli_string(psi, y=(i2, i4)).real
        val -= pauli_string(psi, z=(i1, i3)).real + pauli_string(psi, z=(i2, i4)).real
        val += pauli_string(psi, x=(i1, i2, i3, i4)).real + pauli_string(psi, y=(i1, i2, i3, i4)).real
        total += val / 4.0
    return total / len(lat.plaquettes)


@dataclass
class VortexReport:
    n_v: float
    vorticity_map: np.ndarray
    spin_current_map: dict
    rms_vorticity: float

    def csv(self) -> str:
        rows = ["plaquette,V"] + [f"{k},{v:.12g}" for k, v in enumerate(self.vorticity_map)]
        rows += ["", "i,j,current"] + [f"{i},{j},{v:.12g}" for (i, j), v in sorted(self.spin_current_map.items())]
        return "\n".join(rows) + "\n"


def vorticity_and_current(psi: StateVector, lat: Lattice, c: np.ndarray | None = None,
                          with_density: bool = True) -> VortexReport:
    """Per-plaquette vorticity, per-bond spin current ``<X_iY_j - Y_iX_j>/2`` and rms vorticity."""
    if c is None:
        c = hop_correlations(psi)
    current = {(i, j): (xy_pair(c, i, j) - xy_pair(c, j, i)) / 2.0 for i, j in lat.bonds}
    vort = np.array([
        0.25 * (xy_pair(c, i1, i2) - xy_pair(c, i3, i2) + xy_pair(c, i3, i4) - xy_pair(c, i1, i4))
        for i1, i2, i3, i4 in lat.plaquettes
    ])
    rms = float(np.sqrt(np.mean(vort ** 2))) if len(vort) else 0.0
    nv = vortex_density(psi, lat) if (with_density and lat.plaquettes) else math.nan
    return VortexReport(nv, vort, current, rms)


@dataclass
class EnergyReport:
    eps: float
    sigma_eps: float
    per_bond: dict
    column_profile: np.ndarray

    def scalars(self) -> dict:
        return {"eps": self.eps, "sigma_eps": self.sigma_eps}

    def csv(self) -> str:
        rows = ["i,j,bond_energy"] + [f"{i},{j},{v:.12g}" for (i, j), v in sorted(self.per_bond.items())]
        rows += ["", "x,column_energy"] + [f"{x},{v:.12g}" for x, v in enumerate(self.column_profile)]
        return "\n".join(rows) + "\n"


def column_profile(lat: Lattice, per_bond: dict) -> np.ndarray:
    """Mean site energy per x-column; each bond's energy is split evenly between its two sites."""
    site = np.zeros(lat.n_sites)
    for (i, j), v in per_bond.items():
        site[i] += v / 2.0
        site[j] += v / 2.0
    return np.array([site[[lat.site_id(x, y) for y in range(lat.ly)]].mean() for x in range(lat.lx)])


def energy(psi: StateVector, h_xy: XYEnergyObservable, c: np.ndarray | None = None) -> EnergyReport:
    """``eps = <H_XY>/(n_B g_m)`` and its fluctuation from ``||H_XY psi||^2``, in units of ``g_m``."""
    lat = h_xy.lattice
    if c is None:
        c = hop_correlations(psi)
    per_bond = {(i, j): xx_yy_pair(c, i, j) for i, j in lat.bonds}
    h = h_xy.as_hamiltonian()
    hpsi = apply(h, psi).amplitudes
    mean = float(np.vdot(psi.amplitudes, hpsi).real)
    sq = float(np.vdot(hpsi, hpsi).real)
    nb = lat.n_bonds
    return EnergyReport(mean / nb, math.sqrt(max(sq - mean * mean, 0.0)) / nb, per_bond,
                        column_profile(lat, per_bond))


@dataclass
class TransportFit:
    D: float = math.nan
    r2: float = math.nan
    rms_resid: float = math.nan
    gamma: float = math.nan
    gamma_rms_resid: float = math.nan
    window: tuple = ()
    valid: bool = False
    gamma_valid: bool = False
    degenerate: bool = False

    def scalars(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def diffusion_generator(n_cols: int) -> np.ndarray:
    """Discrete Laplacian with reflecting ends."""
    lap = np.zeros((n_cols, n_cols))
    for x in range(n_cols):
        if x > 0:
            lap[x, x - 1] += 1.0
            lap[x, x] -= 1.0
        if x + 1 < n_cols:
            lap[x, x + 1] += 1.0
            lap[x, x] -= 1.0
    return lap


def diffusion_model(profile0, times, d: float) -> np.ndarray:
    lap = diffusion_generator(len(profile0))
    t0 = times[0]
    return np.array([expm(d * (t - t0) * lap) @ profile0 for t in times])


def imbalance(profile: np.ndarray, cut_x: int) -> float:
    return float(np.mean(profile[:cut_x]) - np.mean(profile[cut_x:]))


def fit_transport(times, profiles, cut_x: int | None = None, vorticity=None, window=None) -> TransportFit:
    """Diffusion constant from column profiles and vorticity decay rate.

    ``times`` are in units of ``1/g`` so ``D`` and ``Gamma`` come out in units of ``g``.
    ``vorticity``, if given, is an rms-vorticity trace on the same time grid;
    ``window`` restricts the exponential fit to ``t0 <= t <= t1``.
    """
    times = np.asarray(times, dtype=float)
    profiles = np.asarray(profiles, dtype=float)
    if len(times) < 4:
        raise ValueError("transport fit needs at least 4 time points")
    fit = TransportFit()
    p0 = profiles[0]
    if cut_x is None:
        cut_x = len(p0) // 2
    imb = np.array([imbalance(p, cut_x) for p in profiles])
    spread = np.ptp(profiles, axis=1)
    if np.all(spread < 1e-12) or np.ptp(imb) < 1e-12 * max(1.0, abs(imb[0])):
        fit.D, fit.degenerate = 0.0, True
    else:
        def loss(d):
            return float(np.sum((diffusion_model(p0, times, d) - profiles) ** 2))

        res = minimize_scalar(loss, bounds=(0.0, 50.0), method="bounded", options={"xatol": 1e-10})
        resid = diffusion_model(p0, times, res.x) - profiles
        tot = np.sum((profiles - profiles.mean(axis=1, keepdims=True)) ** 2)
        fit.D = float(res.x)
        fit.rms_resid = float(np.sqrt(np.mean(resid ** 2)))
        fit.r2 = float(1.0 - np.sum(resid ** 2) / tot) if tot > 0 else math.nan
        fit.valid = True
    if vorticity is not None:
        v = np.asarray(vorticity, dtype=float)
        lo, hi = window if window else (times[0], times[-1])
        # round-off level vorticity carries no decay information
        sel = (times >= lo) & (times <= hi) & (v > 1e-12)
        if sel.sum() >= 3:
            a = np.polyfit(times[sel], np.log(v[sel]), 1)
            fit.gamma = float(max(-a[0], 0.0))
            fit.gamma_rms_resid = float(np.sqrt(np.mean((np.polyval(a, times[sel]) - np.log(v[sel])) ** 2)))
            fit.gamma_valid = True
        fit.window = (float(lo), float(hi))
    return fit


def summary_json(d: dict) -> str:
    """Stable, diff-able JSON for scalar summaries."""
    def clean(v):
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, float)):
            v = float(v)
            return None if not math.isfinite(v) else float(f"{v:.12g}")
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, np.bool_):
            return bool(v)
        if isinstance(v, np.ndarray):
            return clean(v.tolist())
        return v

    return json.dumps(clean(d), indent=2, sort_keys=True) + "\n"
