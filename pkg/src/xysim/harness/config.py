"""Flat ``section.key=value`` experiment configuration (schema 1)."""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field

SCHEMA = 1
PROTOCOLS = ("quench", "kz", "excitations", "dimer", "scan")


class ConfigError(ValueError):
    pass


@dataclass
class LatticeCfg:
    lx: int = 4
    ly: int = 4


@dataclass
class HamiltonianCfg:
    g_mhz: float = 10.0
    gm_mhz: float = 20.0
    stagger_mhz: float = 30.0
    disorder_width_mhz: float = 10.0
    xnx_frac: float = 0.0
    xix_frac: float = 0.0
    nxx_frac: float = 0.0
    nn_frac: float = 0.0
    dg_xnx_khz: float = 0.0
    dg_nxx_khz: float = 0.0
    ferromagnetic: bool = False


@dataclass
class QuenchCfg:
    t_ns: list = field(default_factory=lambda: [0.0, 25.0, 50.0, 100.0])
    ramp_ns: float = 6.0
    n_disorder: int = 4
    shots: int = 100000


@dataclass
class KzCfg:
    t_r_ns: list = field(default_factory=lambda: [8.0, 16.0, 32.0])
    checkpoint_fracs: list = field(default_factory=lambda: [1.0])
    shots: int = 0


@dataclass
class ExcitationsCfg:
    t_r_ns: list = field(default_factory=lambda: [16.0])
    n_0: list = field(default_factory=lambda: [0, 1, 2])
    placements: int = 1
    renyi_sizes: list = field(default_factory=list)
    rm_settings: int = 0
    rm_shots: int = 0


@dataclass
class DimerCfg:
    phi: str = "0:0,2:pi"
    t_ns: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    ramp_ns: float = 0.0
    vorticity_window_g: list = field(default_factory=list)


@dataclass
class NoiseCfg:
    enabled: bool = False
    readout_flip: float = 0.02
    decay: float = 0.04
    shots: int = 100000


@dataclass
class AnalysisCfg:
    fit_range_max: float = 6.0
    parity_correction: bool = True


@dataclass
class IntegratorCfg:
    ramp: str = "rk45"
    rtol: float = 1e-9
    atol: float = 1e-12
    magnus_step_ns: float = 1.0
    cheb_tol: float = 1e-10
    symmetry: bool = True


@dataclass
class ScanCfg:
    t_ns: float = 100.0
    shots: int = 100000
    dg_xnx_khz: list = field(default_factory=lambda: [0.0])
    dg_nxx_khz: list = field(default_factory=lambda: [0.0])


@dataclass
class ExperimentConfig:
    protocol: str = "kz"
    seed: int | None = None
    schema: int = SCHEMA
    output_dir: str = "out"
    lattice: LatticeCfg = field(default_factory=LatticeCfg)
    hamiltonian: HamiltonianCfg = field(default_factory=HamiltonianCfg)
    quench: QuenchCfg = field(default_factory=QuenchCfg)
    kz: KzCfg = field(default_factory=KzCfg)
    excitations: ExcitationsCfg = field(default_factory=ExcitationsCfg)
    dimer: DimerCfg = field(default_factory=DimerCfg)
    noise: NoiseCfg = field(default_factory=NoiseCfg)
    analysis: AnalysisCfg = field(default_factory=AnalysisCfg)
    integrator: IntegratorCfg = field(default_factory=IntegratorCfg)
    scan: ScanCfg = field(default_factory=ScanCfg)

    def validate(self):
        if self.schema != SCHEMA:
            raise ConfigError(f"unsupported schema {self.schema}; this build reads schema={SCHEMA}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got '{self.protocol}'")
        if self.seed is None:
            raise ConfigError("seed is required")
        if self.lattice.lx < 1 or self.lattice.ly < 1:
            raise ConfigError("lattice dimensions must be positive")
        if self.lattice.lx * self.lattice.ly > 30:
            raise ConfigError("state-vector simulation is limited to 30 sites")
        for sec in (self.hamiltonian, self.integrator, self.noise, self.analysis):
            for f in dataclasses.fields(sec):
                v = getattr(sec, f.name)
                if isinstance(v, float) and not math.isfinite(v):
                    raise ConfigError(f"{f.name} must be finite, got {v}")
        if self.integrator.ramp not in ("rk45", "magnus"):
            raise ConfigError("integrator.ramp must be rk45 or magnus")
        for name, vals in (("quench.t_ns", self.quench.t_ns), ("kz.t_r_ns", self.kz.t_r_ns),
                           ("excitations.t_r_ns", self.excitations.t_r_ns), ("dimer.t_ns", self.dimer.t_ns)):
            if any((not math.isfinite(v)) or v < 0 for v in vals):
                raise ConfigError(f"{name} entries must be finite and nonnegative")
        if self.protocol == "kz" and not self.kz.t_r_ns:
            raise ConfigError("kz.t_r_ns must be nonempty")
        if any(not 0 < f <= 1 for f in self.kz.checkpoint_fracs):
            raise ConfigError("kz.checkpoint_fracs must lie in (0, 1]")
        if self.quench.n_disorder < 1:
            raise ConfigError("quench.n_disorder must be >= 1")
        n = self.lattice.lx * self.lattice.ly
        for s in self.excitations.renyi_sizes:
            if not 0 < s < n:
                raise ConfigError(f"renyi size {s} outside (0, {n})")
        if self.protocol == "dimer":
            if self.lattice.lx % 2:
                raise ConfigError("dimer covering pairs columns 2k and 2k+1, so lx must be even")
            parse_phi_map(self.dimer.phi, self.lattice.lx)
        if self.protocol == "scan" and (not self.scan.dg_xnx_khz or not self.scan.dg_nxx_khz):
            raise ConfigError("scan grid is empty")
        return self


def parse_phi_map(text: str, lx: int) -> list:
    """``"x0:phi0,x1:phi1"`` -> per-column phases; each entry applies from column ``x`` onward."""
    pts = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            x, v = part.split(":")
            pts.append((int(x), _phase(v)))
        except ValueError as e:
            raise ConfigError(f"bad dimer.phi entry '{part}'") from e
    pts.sort()
    if not pts or pts[0][0] != 0:
        raise ConfigError("dimer.phi must start at column 0")
    cols = []
    for x in range(lx):
        cols.append([v for x0, v in pts if x0 <= x][-1])
    return cols


def _phase(v: str) -> float:
    v = v.strip().lower().replace(" ", "")
    if "pi" in v:
        num, _, den = v.partition("/")
        coef = num.replace("*", "").replace("pi", "")
        c = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
        return c * math.pi / (float(den) if den else 1.0)
    return float(v)


def _convert(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int or tp == (int | None):
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw.strip()
        if tp is list or origin is list:
            items = [x.strip() for x in raw.split(",") if x.strip()]
            return [int(x) if _is_int(x) else float(x) for x in items]
    except ValueError as e:
        raise ConfigError(f"cannot parse {key}={raw!r}") from e
    raise ConfigError(f"unsupported field type for {key}")


def _is_int(x: str) -> bool:
    try:
        int(x)
        return True
    except ValueError:
        return False


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen_schema = False
    top = _hints(ExperimentConfig)
    lines = [ln for ln in text.splitlines()]
    items = []
    for n, line in enumerate(lines, 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = (p.strip() for p in s.split("=", 1))
        items.append((n, k, v))
    for n, k, v in items + [(0, k, str(v)) for k, v in (overrides or {}).items()]:
        if k == "schema":
            seen_schema = True
        if "." in k:
            sec, key = k.split(".", 1)
            if sec not in top or not dataclasses.is_dataclass(getattr(cfg, sec)):
                raise ConfigError(f"line {n}: unknown section '{sec}'")
            obj = getattr(cfg, sec)
            hints = _hints(type(obj))
            if key not in hints:
                raise ConfigError(f"line {n}: unknown key '{k}'")
            setattr(obj, key, _convert(v, hints[key], k))
        else:
            if k not in top or dataclasses.is_dataclass(getattr(cfg, k, None)):
                raise ConfigError(f"line {n}: unknown key '{k}'")
            setattr(cfg, k, _convert(v, top[k], k))
    if not seen_schema:
        raise ConfigError("config must declare schema=1")
    return cfg.validate()


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(dump_config(c))`` reproduces ``c``."""
    out = [f"schema={cfg.schema}", f"protocol={cfg.protocol}", f"seed={cfg.seed}", f"output_dir={cfg.output_dir}"]
    for f in dataclasses.fields(cfg):
        obj = getattr(cfg, f.name)
        if not dataclasses.is_dataclass(obj):
            continue
        for g in dataclasses.fields(obj):
            v = getattr(obj, g.name)
            if isinstance(v, bool):
                v = int(v)
            elif isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            out.append(f"{f.name}.{g.name}={v}")
    return "\n".join(out) + "\n"
