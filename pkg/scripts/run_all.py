"""Run every bundled scenario and write reports under one directory.

    python scripts/run_all.py [--out DIR] [--parallel]

Prints one line per scenario with its verdict and wall time; exits 1 if any
scenario fails.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from mfield.harness import bundled_scenarios, load_scenario, run_scenario, write_report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="mfield-out")
    ap.add_argument("--parallel", action="store_true")
    args = ap.parse_args(argv)
    status = 0
    for name, path in sorted(bundled_scenarios().items()):
        doc, raw = load_scenario(path)
        t0 = time.perf_counter()
        report = run_scenario(doc, parallel=args.parallel, raw=raw)
        secs = time.perf_counter() - t0
        write_report(report, Path(args.out) / name)
        print(f"{'PASS' if report.passed else 'FAIL'}  {name:24s} {secs:7.1f} s")
        status |= not report.passed
    return int(status)


if __name__ == "__main__":
    sys.exit(main())
