"""Run every CLI subcommand on one config and print a status table.

    python3 scripts/run_all.py [--config FILE] [--out DIR] [--jobs N]

Each subcommand writes into its own subdirectory of ``--out``.  The exit code
is the largest one returned by any subcommand.
"""

import argparse
import json
import sys
from pathlib import Path

from overlap_lab import cli


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).parent / "configs" / "default.yaml"))
    p.add_argument("--out", default="results")
    p.add_argument("--jobs", type=int)
    p.add_argument("--only", nargs="*", choices=sorted(cli.SUITES))
    args = p.parse_args(argv)
    worst = 0
    for sub in args.only or cli.SUITES:
        out = Path(args.out) / sub
        cmd = [sub, "--config", args.config, "--out", str(out)]
        if args.jobs:
            cmd += ["--jobs", str(args.jobs)]
        code = cli.main(cmd)
        worst = max(worst, code)
        manifest = out / "manifest.json"
        if manifest.exists():
            m = json.loads(manifest.read_text())
            failed = [k for k, v in m.get("checks", {}).items() if not v]
            print(f"{sub:14s} exit {code}  {m['wall_time_s']:7.1f}s  "
                  f"failed: {', '.join(failed) or 'none'}")
        else:
            print(f"{sub:14s} exit {code}  (no manifest)")
    return worst


if __name__ == "__main__":
    sys.exit(main())
