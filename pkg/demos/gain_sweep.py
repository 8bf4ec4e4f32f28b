"""Gain over THP versus channel parameter c for several d, written as CSV and SVG.

A reduced-size run of the sweep; pass a symbol count to change the
Monte-Carlo length (default 10**5).
"""

import sys

from probprecode import SimConfig, run_sweep
from probprecode.cli import render_svg, write_atomic
from probprecode.sim import read_sweep_csv, sweep_csv


def main(n_symbols=10 ** 5):
    schemes = ("thp-mb", "linear-mb", "prob-precoding-theoretical")
    templates = [SimConfig(s, 2, n_symbols=n_symbols, seed=7) for s in schemes]
    c_grid = [round(0.1 * i, 1) for i in range(11)]
    results = run_sweep(templates, c_grid, [0.0, -0.3])
    text = sweep_csv(results)
    write_atomic("gain_sweep.csv", text)
    write_atomic("gain_sweep.svg", render_svg(read_sweep_csv(text)))
    for r in results:
        if r.d == 0.0:
            print(f"{r.scheme:28s} c={r.c:.1f} gain={r.gain_db:7.3f} dB")
    print("wrote gain_sweep.csv and gain_sweep.svg")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10 ** 5)
