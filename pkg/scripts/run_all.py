"""Run every config in ``configs/`` into ``results/<name>/``.

    python scripts/run_all.py [--desk-scale] [--out results]
"""
import argparse
import sys
from pathlib import Path

from l1rom import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(ROOT / "results"))
    parser.add_argument("--desk-scale", action="store_true")
    args = parser.parse_args()
    worst = cli.EXIT_OK
    for path in sorted((ROOT / "configs").glob("*.json")):
        argv = ["run", str(path), "--out", str(Path(args.out) / path.stem)]
        if args.desk_scale:
            argv.append("--desk-scale")
        code = cli.main(argv)
        print(f"{path.stem}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
