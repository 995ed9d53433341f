#!/usr/bin/env python3
"""Download the UCI Parkinsons Telemonitoring dataset.

Writes data/parkinsons_updrs.data next to the repository root and
verifies the expected shape (5875 rows, 22 columns). The benchmark
test picks the file up from that location automatically; pass
--dest to put it somewhere else and point MOMOGP_PARKINSONS_CSV at it.
"""

import argparse
import sys
import urllib.request
from pathlib import Path

import numpy as np

URL = (
    "https://archive.ics.uci.edu/ml/machine-learning-databases/"
    "parkinsons/telemonitoring/parkinsons_updrs.data"
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--dest",
        default=None,
        help="output path (default: <repo>/data/parkinsons_updrs.data)",
    )
    parser.add_argument("--url", default=URL)
    parser.add_argument("--timeout", type=float, default=60.0)
    args = parser.parse_args(argv)

    if args.dest is None:
        dest = Path(__file__).resolve().parents[1] / "data" / "parkinsons_updrs.data"
    else:
        dest = Path(args.dest)
    dest.parent.mkdir(parents=True, exist_ok=True)

    print(f"fetching {args.url}")
    try:
        with urllib.request.urlopen(args.url, timeout=args.timeout) as resp:
            raw = resp.read()
    except Exception as exc:
        print(f"download failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    dest.write_bytes(raw)
    table = np.loadtxt(dest, delimiter=",", skiprows=1)
    if table.shape != (5875, 22):
        print(
            f"unexpected shape {table.shape}, wanted (5875, 22); "
            f"kept the file at {dest} for inspection",
            file=sys.stderr,
        )
        return 1
    print(f"wrote {dest} ({len(raw)} bytes, {table.shape[0]} rows)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
