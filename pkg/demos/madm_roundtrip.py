"""Encode random bits with the Markov distribution matcher and check what comes out.

Shows the block length per 512-bit frame, the achieved rate against the
table's entropy rate, and the empirical transition rows.
"""

import numpy as np

from probprecode import (
    PrecodingFilter,
    ShapingProblem,
    decode,
    encode,
    joint_to_markov,
    make_constellation,
    quantize_conditional,
    solve_markov_shaping,
)
from probprecode.madm import measured_rate, quantized_entropy_rate


def main():
    sol = solve_markov_shaping(ShapingProblem(make_constellation(4), PrecodingFilter((1.0, 0.8)), 1.5))
    q = quantize_conditional(joint_to_markov(sol.pmf))
    rng = np.random.default_rng(1)
    frames = []
    for _ in range(300):
        bits = rng.integers(0, 2, 512).tolist()
        frame = encode(bits, q)
        assert decode(frame, q) == bits
        frames.append(frame)
    lengths = [len(f) for f in frames]
    print(f"frames: {len(frames)}, symbols per frame {min(lengths)}..{max(lengths)}, "
          f"mean {np.mean(lengths):.1f}")
    print(f"rate {measured_rate(frames):.4f} bits/sym, table entropy rate "
          f"{quantized_entropy_rate(q):.4f}")

    counts = np.zeros((q.n_contexts, q.m_b))
    for f in frames:
        prev = (0,) + f.symbols[:-1]
        np.add.at(counts, (np.asarray(prev), np.asarray(f.symbols)), 1)
    np.set_printoptions(precision=3, suppress=True)
    print("target rows:\n", q.probabilities())
    print("empirical rows:\n", counts / counts.sum(axis=1, keepdims=True))


if __name__ == "__main__":
    main()
