import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from xysim import xeb
from xysim.harness import cli
from xysim.harness.config import ConfigError, dump_config, parse_config, parse_phi_map
from xysim.harness import protocols as pr
from xysim.lattice import build_rect_lattice, neel_bits

ROOT = Path(__file__).resolve().parents[1]


def cfg_of(text, **over):
    return parse_config("schema=1\nseed=3\n" + text, over or None)


# ---------------------------------------------------------------- config

def test_config_roundtrip():
    c = cfg_of("protocol=dimer\nlattice.lx=4\nlattice.ly=2\ndimer.phi=0:0,2:pi/2\nnoise.enabled=yes\n"
               "kz.t_r_ns=5,10.5\n")
    d = parse_config(dump_config(c))
    assert d == c
    assert d.kz.t_r_ns == [5, 10.5] and d.noise.enabled


@pytest.mark.parametrize("text", [
    "lattice.lx=4\n",                       # no schema
    "schema=2\nseed=1\n",
    "schema=1\n",                           # no seed
    "schema=1\nseed=1\nfoo.bar=1\n",
    "schema=1\nseed=1\nlattice.lz=3\n",
    "schema=1\nseed=1\nlattice.lx=abc\n",
    "schema=1\nseed=1\nnot a pair\n",
    "schema=1\nseed=1\nlattice.lx=7\nlattice.ly=5\n",
    "schema=1\nseed=1\nkz.t_r_ns=-1\n",
    "schema=1\nseed=1\nhamiltonian.g_mhz=nan\n",
    "schema=1\nseed=1\nintegrator.ramp=euler\n",
    "schema=1\nseed=1\nprotocol=dimer\nlattice.lx=3\n",
    "schema=1\nseed=1\nprotocol=dimer\ndimer.phi=1:pi\n",
    "schema=1\nseed=1\nprotocol=scan\nscan.dg_xnx_khz=\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_phi_map():
    assert parse_phi_map("0:0,2:pi", 4) == [0, 0, math.pi, math.pi]
    assert parse_phi_map("0:-pi/2", 2) == [-math.pi / 2] * 2


# ---------------------------------------------------------------- CLI

def _write(tmp_path, text):
    p = tmp_path / "c.txt"
    p.write_text(text)
    return str(p)


def test_cli_exit_codes(tmp_path):
    ok = _write(tmp_path, "schema=1\nseed=1\nlattice.lx=2\nlattice.ly=2\nkz.t_r_ns=5\nkz.shots=10\n")
    assert cli.main(["kz", "--config", ok, "--out", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    for f in ("summary.json", "kz.csv", "manifest.txt", "timing.json", "samples/kz_tr0.txt"):
        assert (out / f).exists()
    assert json.loads((out / "summary.json").read_text())["protocol"] == "kz"
    assert xeb.SampleSet.loads((out / "samples/kz_tr0.txt").read_text()).total == 10
    man = (out / "manifest.txt").read_text()
    assert "seed=1" in man and "numpy=" in man and "output_dir" not in man
    assert cli.main(["kz", "--config", str(tmp_path / "missing.txt")]) == 2
    bad = _write(tmp_path, "schema=1\nseed=1\nlattice.lx=oops\n")
    assert cli.main(["kz", "--config", bad]) == 2
    assert cli.main(["kz", "--config", ok, "--threads", "0"]) == 2
    num = _write(tmp_path, "schema=1\nseed=1\nlattice.lx=2\nlattice.ly=2\nkz.t_r_ns=10\n"
                           "integrator.rtol=1e-300\nintegrator.atol=1e-300\n")
    assert cli.main(["kz", "--config", num, "--out", str(tmp_path / "n")]) == 3


def _run_cli(args, threads_env):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads_env), PYTHONWARNINGS="ignore")
    return subprocess.run([sys.executable, "-m", "xysim.harness.cli", *args], env=env, capture_output=True,
                          text=True, check=True)


def test_determinism_across_threads(tmp_path):
    text = ("schema=1\nseed=11\nlattice.lx=3\nlattice.ly=3\nkz.t_r_ns=4,8\nkz.shots=200\n"
            "noise.enabled=1\nnoise.shots=2000\n")
    conf = _write(tmp_path, text)
    for th in (1, 4):
        _run_cli(["kz", "--config", conf, "--out", str(tmp_path / f"t{th}"), "--threads", str(th)], 4)
    files = sorted(p.relative_to(tmp_path / "t1") for p in (tmp_path / "t1").rglob("*") if p.is_file())
    files = [f for f in files if f.name != "timing.json"]
    assert len(files) > 4
    for f in files:
        assert (tmp_path / "t1" / f).read_bytes() == (tmp_path / "t4" / f).read_bytes(), f


# ---------------------------------------------------------------- protocols

def test_quench_t0_samples_equal_initial_string():
    c = cfg_of("lattice.lx=3\nlattice.ly=2\nquench.t_ns=0,20\nquench.ramp_ns=0\nquench.n_disorder=2\n"
               "quench.shots=500\n")
    res = pr.run_quench(c)
    lat = build_rect_lattice(3, 2)
    s0 = res.samples["quench_i0_t0"]
    assert s0.counts == {neel_bits(lat): 500}
    assert res.summary["checkpoints"][0]["self_xeb_exact"] == pytest.approx(s0.basis.dim - 1)
    assert res.summary["checkpoints"][1]["S_vn"] > 0.5


def test_excitations_n0_zero_matches_kz():
    base = "lattice.lx=3\nlattice.ly=3\nkz.t_r_ns=6,12\nexcitations.t_r_ns=6,12\nexcitations.n_0=0\n"
    kz = pr.run_kz(cfg_of(base))
    ex = pr.run_excitations(cfg_of(base))
    for a, b in zip(kz.summary["cells"], ex.summary["cells"]):
        extra = {"n_0", "placement"}
        assert {k: v for k, v in b.items() if k not in extra} == a
    assert kz.tables["kz_tr0_correlations.csv"] == ex.tables["exc_tr0_n0_p0_correlations.csv"]


def test_place_excitations_preserves_number():
    lat = build_rect_lattice(4, 4)
    b = neel_bits(lat)
    for n0 in range(5):
        nb = pr.place_excitations(lat, b, n0, [1, n0])
        assert bin(nb).count("1") == 8 and bin(nb ^ b).count("1") == 2 * n0
    with pytest.raises(ValueError):
        pr.place_excitations(lat, b, 9, 0)


def test_dimer_singlets_t0():
    c = cfg_of("protocol=dimer\nlattice.lx=4\nlattice.ly=2\ndimer.phi=0:pi\ndimer.t_ns=0,5\n")
    res = pr.run_dimer(c)
    lat = build_rect_lattice(4, 2)
    pairs = set(pr.dimer_pairs(lat))
    rows = res.tables["dimer_t0_energy.csv"].split("\n\n")[0].splitlines()[1:]
    for line in rows:
        i, j, v = line.split(",")
        want = -1.0 if (int(i), int(j)) in pairs else 0.0
        assert float(v) == pytest.approx(want, abs=1e-12)
    assert res.summary["checkpoints"][0]["max_current"] == pytest.approx(0.0, abs=1e-12)


def test_dimer_quarter_phase_current():
    c = cfg_of("protocol=dimer\nlattice.lx=2\nlattice.ly=2\ndimer.phi=0:pi/2\ndimer.t_ns=0\n")
    res = pr.run_dimer(c)
    assert res.summary["checkpoints"][0]["max_current"] == pytest.approx(1.0)


def test_dimer_odd_columns():
    with pytest.raises(ValueError):
        pr.dimer_pairs(build_rect_lattice(3, 2))


def test_scan_self_consistency_and_single_point():
    text = "lattice.lx=3\nlattice.ly=2\nscan.t_ns=100\nscan.shots=20000\nquench.ramp_ns=0\n" \
           "scan.dg_xnx_khz=-40,0,40\nscan.dg_nxx_khz=-40,0,40\n"
    res = pr.scan_coherent_shifts(cfg_of(text))
    assert res.summary["argmax"] == [0.0, 0.0] and len(res.summary["grid"]) == 9
    one = pr.scan_coherent_shifts(cfg_of(text), dg_grid=[(0.0, 0.0)])
    assert len(one.summary["grid"]) == 1
    with pytest.raises(ValueError):
        pr.scan_coherent_shifts(cfg_of(text), dg_grid=[])


def test_scan_planted_shift():
    text = "lattice.lx=4\nlattice.ly=3\nscan.t_ns=200\nscan.shots=100000\nquench.ramp_ns=0\n" \
           "hamiltonian.dg_xnx_khz=-20\nhamiltonian.dg_nxx_khz=-20\n" \
           "scan.dg_xnx_khz=-40,-20,0\nscan.dg_nxx_khz=-40,-20,0\n"
    res = pr.scan_coherent_shifts(cfg_of(text))
    assert res.summary["argmax"] == [-20.0, -20.0]
