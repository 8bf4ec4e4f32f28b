"""Optimal power versus rate for a two-tap precoder.

For each rate the Markov-shaped optimum is compared with i.i.d.
Maxwell-Boltzmann symbols of the same entropy fed through the same filter.
"""

import math

import numpy as np

from probprecode import (
    JointPmf,
    PrecodingFilter,
    ShapingProblem,
    make_constellation,
    solve_markov_shaping,
    solve_maxwell_boltzmann,
    transmit_power,
)

C = 0.6
M_B = 8


def main():
    alphabet = make_constellation(M_B)
    g = PrecodingFilter((1.0, C))
    print(f"8-ASK base, precoder g = [1, {C}]")
    print(f"{'R':>5} {'markov':>9} {'mb+fir':>9} {'gain dB':>8}")
    for rate in np.arange(1.25, 2.76, 0.25):
        sol = solve_markov_shaping(ShapingProblem(alphabet, g, float(rate)))
        mb = solve_maxwell_boltzmann(alphabet, float(rate))
        iid = transmit_power(JointPmf.iid(alphabet, mb.probs, 2), g)
        print(f"{rate:5.2f} {sol.power:9.4f} {iid:9.4f} "
              f"{10 * math.log10(iid / sol.power):8.3f}")


if __name__ == "__main__":
    main()
