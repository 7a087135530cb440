"""Run the bundled experiment configs, one output directory per config.

    python3 scripts/run_experiments.py [--out results] [NAME ...]

NAME is a file stem under configs/ (default: all of them).
"""

import argparse
import sys
from pathlib import Path

from helmholtz_hp.cli import load_config, parse_and_dispatch

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("names", nargs="*")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    paths = [CONFIGS / f"{n}.toml" for n in args.names] or sorted(CONFIGS.glob("*.toml"))
    status = 0
    for path in paths:
        command = load_config(path)["command"]
        out = Path(args.out) / path.stem
        print(f"{path.stem}: {command} -> {out}")
        code = parse_and_dispatch([command, "--config", str(path), "--out", str(out)])
        if code:
            print(f"{path.stem}: exit {code}", file=sys.stderr)
            status = code
    return status


if __name__ == "__main__":
    sys.exit(main())
