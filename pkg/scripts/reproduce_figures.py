"""Run every built-in figure scenario through all engines and write the CSVs.

    python scripts/reproduce_figures.py [OUT_DIR] [scenario ...]

Each scenario lands in OUT_DIR/<name>/ (default OUT_DIR: ./out).
"""

import sys
from pathlib import Path

from twophoton import cli, scenarios


def main(argv):
    out = Path(argv[0]) if argv else Path("out")
    names = argv[1:] or list(scenarios.NAMED)
    status = 0
    for name in names:
        status = max(status, cli.main(["run", name, "--out", str(out / name)]))
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
