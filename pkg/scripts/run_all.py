"""Run the example configurations through the CLI and print a digest of each.

    python scripts/run_all.py [--only kz,dimer_halves] [--out out] [--seed 1] [--threads 1]
"""
import argparse
import time
from pathlib import Path

from xysim.harness import cli

import digest

HERE = Path(__file__).resolve().parent
ORDER = ["quench", "kz", "excitations", "dimer_halves", "dimer_vortex", "scan", "kz_5x5"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", help="comma-separated config names (default: all but kz_5x5)")
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    a = ap.parse_args()
    names = a.only.split(",") if a.only else ORDER[:-1]
    for name in names:
        cfg = HERE / "configs" / f"{name}.cfg"
        proto = next(ln.split("=", 1)[1].strip() for ln in cfg.read_text().splitlines()
                     if ln.startswith("protocol="))
        out = Path(a.out) / name
        argv = [proto, "--config", str(cfg), "--out", str(out)]
        if a.seed is not None:
            argv += ["--seed", str(a.seed)]
        if a.threads is not None:
            argv += ["--threads", str(a.threads)]
        t0 = time.perf_counter()
        code = cli.main(argv)
        print(f"== {name} ({proto}) exit {code}, {time.perf_counter() - t0:.1f}s")
        if code == 0:
            digest.main(out)
        print()


if __name__ == "__main__":
    main()
