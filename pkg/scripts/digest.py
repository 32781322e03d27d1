"""Print a compact table from an ``xysim`` output directory.

    python scripts/digest.py out/kz
"""
import json
import sys
from pathlib import Path


def _f(v, nd=4):
    return "nan" if v is None else f"{v:.{nd}f}" if isinstance(v, float) else str(v)


def quench(s):
    print(f"n_q={s['n_q']} dim={s['dim']} S_typical={s['S_typical_nats']:.4f} nats")
    print("t_ns      self_xeb  pt_ks   S_vn    E_N     n_eff")
    for c in s["checkpoints"]:
        print(f"{c['t_ns']:8.2f}  {c['self_xeb_exact']:.4f}  {c['pt_ks']:.4f}  {c['S_vn']:.4f}  {c['E_N']:.4f}  "
              f"{c['n_eff']:.3f}")
    sat = s["saturation"]
    print(f"saturation: t={_f(sat['t_sat_ns'], 2)} ns, g*t/L={_f(sat['ratio_per_g'], 3)} "
          f"(device reference {sat['reference_ratio_per_g']})")


def kz(s):
    print(f"n_q={s['n_q']} dim={s['dim']}")
    print("g_m*t_r  frac  eps      sigma    xi      gamma   n_v")
    for c in s["cells"]:
        print(f"{c['gm_t_r']:7.2f}  {c['frac']:.2f}  {c['eps']:.4f}  {c['sigma_eps']:.4f}  {_f(c['xi'], 3):>6}  "
              f"{_f(c['gamma'], 3):>6}  {_f(c['n_v'], 4)}")
        if "bell" in c:
            print("         bell eps: " + ", ".join(f"{k}={v:.4f}" for k, v in c["bell"].items()))
    ref = s["references"]
    print(f"device references: eps_gs={ref['eps_gs']}, KZ exponent={ref['kz_exponent']}, "
          f"KT gamma={ref['kt_exponent']}")


def excitations(s):
    print("n_0  placement  eps      sigma    xi      renyi2_exact")
    for c in s["cells"]:
        r2 = c.get("renyi2_exact")
        print(f"{c['n_0']:3d}  {c['placement']:9d}  {c['eps']:.4f}  {c['sigma_eps']:.4f}  {_f(c['xi'], 3):>6}  "
              f"{' '.join(f'{x:.3f}' for x in r2) if r2 else ''}")


def dimer(s):
    print("g*t     eps      imbalance  rms_vort  max_current")
    for c in s["checkpoints"]:
        print(f"{c['t_g']:6.2f}  {c['eps']:.4f}  {c['imbalance']:9.4f}  {c['rms_vorticity']:.4f}    "
              f"{c['max_current']:.4f}")
    t = s["transport"]
    if t:
        print(f"D={_f(t['D'])} g (R2={_f(t['r2'])}), Gamma={_f(t['gamma'])} g; device references "
              f"D={s['references']['diffusion_D_g']} g, Gamma={s['references']['vorticity_gamma_g']} g")


def scan(s):
    print("dg_XnX  dg_nXX  linear_xeb  normalized")
    for r in s["grid"]:
        print(f"{r['dg_xnx_khz']:6.1f}  {r['dg_nxx_khz']:6.1f}  {r['linear_xeb']:.5f}    {r['xeb_normalized']:.5f}")
    print(f"argmax: {s['argmax']} kHz from {s['shots']} reference shots")


def main(path):
    s = json.loads((Path(path) / "summary.json").read_text())
    {"quench": quench, "kz": kz, "excitations": excitations, "dimer": dimer, "scan": scan}[s["protocol"]](s)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "out")
