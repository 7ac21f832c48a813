#!/usr/bin/env python3
"""Dump the Q lookup table (center / lower 3 dB per Q) as CSV."""

import argparse
import sys

from bpnet.tqwt import build_q_lookup


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="qtable.csv")
    parser.add_argument("--fs", type=float, default=125.0)
    parser.add_argument("--level", type=int, default=10)
    parser.add_argument("--q-min", type=float, default=1.0)
    parser.add_argument("--q-max", type=float, default=1.4)
    parser.add_argument("--step", type=float, default=0.01)
    parser.add_argument("--r", type=float, default=3.0)
    args = parser.parse_args()

    table = build_q_lookup(args.fs, args.level, args.q_min, args.q_max, args.step, args.r)
    table.to_csv(args.out)
    print(f"wrote {len(table)} rows to {args.out}")
    for q, c, lo in zip(table.qs[::10], table.centers_hz[::10], table.lower3db_hz[::10]):
        print(f"  Q={q:.2f}  center {c:.4f} Hz  lower3db {lo:.4f} Hz")
    return 0


if __name__ == "__main__":
    sys.exit(main())
