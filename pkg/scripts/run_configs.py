"""Run experiment configs and write each one's results under an output root.

    python3 scripts/run_configs.py                  # every configs/*.yaml
    python3 scripts/run_configs.py configs/tau.yaml --out results
"""
import argparse
import sys
import time
from pathlib import Path

from qclab.cli import execute, parse_config

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    paths = args.configs or sorted((ROOT / "configs").glob("*.yaml"))
    for path in paths:
        cfg = parse_config(path.read_text())
        if args.workers is not None:
            cfg.workers = args.workers
        t0 = time.perf_counter()
        summary = execute(cfg, args.out / path.stem)
        print(f"== {path.stem} ({cfg.kind}, {time.perf_counter() - t0:.1f}s)")
        for key, value in summary.items():
            print(f"   {key:<22} {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
