#!/usr/bin/env python3
"""Render detection / tracking evaluation curves as ASCII plots.

Reads the CSV files written by ``rcnet eval-det`` (fppi,miss_rate) or
``rcnet eval-track`` (threshold,success_rate) and prints a terminal
plot plus summary numbers, so results can be inspected without a
plotting stack.

Usage:
    python scripts/plot_curves.py curve.csv [more.csv ...]
"""

import argparse
import sys
from pathlib import Path

import numpy as np


def read_curve(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = [tuple(float(v) for v in line.split(",")) for line in lines[1:] if line]
    return header, rows


def ascii_plot(xs, ys, width=60, height=16, logx=False):
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if logx:
        keep = xs > 0
        xs, ys = np.log10(np.maximum(xs[keep], 1e-10)), ys[keep]
        if xs.size == 0:
            return "(no positive x values to plot on a log axis)"
    x_lo, x_hi = float(xs.min()), float(xs.max())
    span_x = (x_hi - x_lo) or 1.0
    grid = [[" "] * width for _ in range(height)]
    for x, y in zip(xs, ys):
        col = int(round((x - x_lo) / span_x * (width - 1)))
        row = int(round((1.0 - min(max(y, 0.0), 1.0)) * (height - 1)))
        grid[row][col] = "*"
    lines = []
    for i, row in enumerate(grid):
        label = f"{1.0 - i / (height - 1):4.2f} |"
        lines.append(label + "".join(row))
    lines.append("     +" + "-" * width)
    lines.append(f"      {x_lo:<10.4g}{'':{max(0, width - 20)}}{x_hi:>10.4g}")
    return "\n".join(lines)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", nargs="+", help="curve CSVs from eval-det/eval-track")
    ap.add_argument("--width", type=int, default=60)
    args = ap.parse_args(argv)
    for path in args.csv:
        header, rows = read_curve(path)
        xs = [r[0] for r in rows]
        ys = [r[1] for r in rows]
        print(f"== {path} ({header[0]} vs {header[1]}, {len(rows)} points)")
        if header[0] == "fppi":
            print(ascii_plot(xs, ys, width=args.width, logx=True))
            # geometric mean of miss rate at 9 log-spaced references
            refs = np.logspace(-2, 0, 9)
            vals = []
            for ref in refs:
                below = [mr for fppi, mr in rows if fppi <= ref]
                vals.append(min(below) if below else max(mr for _, mr in rows))
            vals = np.maximum(vals, 1e-10)
            print(f"log-average miss rate: {float(np.exp(np.mean(np.log(vals)))):.4f}")
        else:
            print(ascii_plot(xs, ys, width=args.width))
            print(f"success AUC: {float(np.mean(ys)):.4f}")
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
