"""``xysim <protocol> --config FILE [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .config import PROTOCOLS, ConfigError, dump_config, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _versions() -> dict:
    import numba
    import scipy

    from .. import __version__

    return {"xysim": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def write_result(res, cfg, out: Path, timing: dict):
    from ..observables import summary_json

    _atomic_write(out / "summary.json", summary_json(res.summary))
    for name, text in sorted(res.tables.items()):
        _atomic_write(out / name, text)
    for name, s in sorted(res.samples.items()):
        _atomic_write(out / "samples" / f"{name}.txt", s.dumps())
    # the output location is left out so relocated runs stay byte-identical
    echo = [ln for ln in dump_config(cfg).splitlines() if not ln.startswith("output_dir=")]
    man = ["# config", *echo, "# versions"]
    man += [f"{k}={v}" for k, v in sorted(_versions().items())]
    man += ["# seeds", f"seed={cfg.seed}", "# files"]
    man += sorted(list(res.tables) + [f"samples/{n}.txt" for n in res.samples] + ["summary.json"])
    _atomic_write(out / "manifest.txt", "\n".join(man) + "\n")
    _atomic_write(out / "timing.json", json.dumps(timing, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xysim", description="Sector-exact XY-model experiment runner")
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("--config", required=True, help="key=value config file (schema=1)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, help="numba worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
        over = {"protocol": args.protocol}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["output_dir"] = args.out
        cfg = parse_config(text, over)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    import numba

    if args.threads is not None:
        if args.threads < 1:
            print("config error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))

    from ..propagator import ConvergenceError
    from .protocols import PROTOCOL_RUNNERS

    t0 = time.perf_counter()
    try:
        res = PROTOCOL_RUNNERS[cfg.protocol](cfg)
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    timing = {"wall_s": round(time.perf_counter() - t0, 3), "threads": numba.get_num_threads(),
              "evolution": res.log.rows}
    out = Path(cfg.output_dir)
    write_result(res, cfg, out, timing)
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
