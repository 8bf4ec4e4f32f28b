"""Baseline precoders, symbol sources and Monte-Carlo shaping-gain measurement.

Gains are always quoted against Tomlinson-Harashima precoding of uniform
``2**R``-ASK symbols over the same channel, as power ratios in dB.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, replace
import csv
import functools
import hashlib
import io
import logging
import math

import numpy as np

from .core import (
    ChannelSpec,
    make_constellation,
    precoder_from_channel,
    joint_to_markov,
)
from .errors import ConvergenceError, InfeasibleRateError, InvalidArgumentError
from .madm import FRAME_BITS, encode, quantize_conditional
from .optimize import ShapingProblem, solve_markov_shaping, solve_maxwell_boltzmann

log = logging.getLogger(__name__)

SCHEMES = (
    "thp-uniform",
    "thp-mb",
    "linear-mb",
    "prob-precoding-theoretical",
    "prob-precoding-madm",
)
REFERENCE = "thp-uniform"
CSV_HEADER = ["scheme", "R", "m_b", "c", "d", "power_ref", "power_test",
              "gain_db", "n_symbols", "seed"]


def thp_precode(a, ch, m_b):
    """Tomlinson-Harashima precoding with a symmetric modulo into ``[-m_b, m_b)``.

    ``x[m] = mod(a[m] - sum_{k>=1} denom[k] x[m-k])`` with zero initial state.
    """
    if not isinstance(ch, ChannelSpec):
        ch = ChannelSpec(tuple(ch))
    fb = [float(v) for v in ch.denom[1:]]
    period = 2.0 * m_b
    out = np.empty(len(a))
    hist = [0.0] * len(fb)
    floor = math.floor
    for i, sym in enumerate(np.asarray(a, dtype=float).tolist()):
        v = sym
        for k, coef in enumerate(fb):
            v -= coef * hist[k]
        v -= period * floor((v + m_b) / period)
        out[i] = v
        if fb:
            hist.insert(0, v)
            hist.pop()
    return out


def linear_precode(a, g):
    """FIR pre-equalization ``x[m] = sum_k g_k a[m-k]`` with zero warm-up."""
    a = np.asarray(a, dtype=float)
    return np.convolve(a, np.asarray(g.taps, dtype=float))[: len(a)]


def sample_markov(model, n, seed):
    """Draw ``n`` symbol amplitudes from a stationary Markov shaping model.

    The first ``order - 1`` symbols are the state drawn from the stationary
    distribution; the rest follow the transition rows.
    """
    rng = np.random.default_rng(seed)
    pts = model.alphabet.points
    m_b, n_states, L = model.m_b, model.n_states, model.order
    cums = [np.cumsum(row).tolist() for row in model.transitions]
    pi = np.asarray(model.state_dist, dtype=float)
    state = int(rng.choice(n_states, p=pi / pi.sum()))
    out = np.empty(n, dtype=np.int64)
    head = []
    s = state
    for _ in range(L - 1):
        s, sym = divmod(s, m_b)
        head.append(sym)
    head.reverse()
    i = 0
    for sym in head[:n]:
        out[i] = pts[sym]
        i += 1
    last = m_b - 1
    for u in rng.random(n - i).tolist():
        sym = bisect_right(cums[state], u)
        if sym > last:
            sym = last
        out[i] = pts[sym]
        i += 1
        state = (state * m_b + sym) % n_states
    return out


def sample_iid(p, n, seed):
    """Draw ``n`` i.i.d. amplitudes from a PMF over the ``len(p)``-ASK alphabet."""
    p = np.asarray(p, dtype=float)
    alphabet = make_constellation(len(p))
    rng = np.random.default_rng(seed)
    return rng.choice(np.asarray(alphabet.points, dtype=np.int64), size=n, p=p / p.sum())


def estimate_power(x):
    """Mean of squares."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InvalidArgumentError("empty sample sequence")
    return float(np.mean(x * x))


def shaping_gain_db(p_ref, p_test):
    """Power saving of the test scheme over the reference, in dB."""
    if not (p_ref > 0 and p_test > 0):
        raise InvalidArgumentError("powers must be positive")
    # difference of logs keeps the gain exactly antisymmetric in its arguments
    return 10.0 * (math.log10(p_ref) - math.log10(p_test))


def derive_seed(seed, c, d, scheme):
    """Per-point seed: ``seed`` xor a stable 64-bit hash of ``(c, d, scheme)``."""
    digest = hashlib.blake2b(f"{float(c)!r}|{float(d)!r}|{scheme}".encode(), digest_size=8)
    return (int(seed) ^ int.from_bytes(digest.digest(), "big")) & (2 ** 64 - 1)


@dataclass(frozen=True)
class SimConfig:
    """One simulated operating point (or a template when ``channel`` is None).

    ``m_b_base`` is the alphabet of the scheme under test; ``thp-uniform``
    requires ``2**R`` points. When omitted it defaults to ``2**R`` for
    ``thp-uniform`` and ``2**(R+1)`` otherwise.
    """

    scheme: str
    rate: float
    channel: ChannelSpec | None = None
    m_b_base: int | None = None
    n_symbols: int = 10 ** 6
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgumentError(f"unknown scheme {self.scheme!r}")
        if self.rate <= 0:
            raise InvalidArgumentError("rate must be positive")
        if self.n_symbols < 1:
            raise InvalidArgumentError("n_symbols must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidArgumentError("seed must be an unsigned 64-bit integer")
        if self.m_b_base is None:
            object.__setattr__(self, "m_b_base", default_alphabet(self.scheme, self.rate))
        if self.scheme == REFERENCE and self.m_b_base != reference_alphabet(self.rate):
            raise InvalidArgumentError("thp-uniform uses the unshaped 2**R-ASK alphabet")
        make_constellation(self.m_b_base)

    @property
    def c(self):
        return self.channel.denom[1] if self.channel and self.channel.L > 1 else 0.0

    @property
    def d(self):
        return self.channel.denom[2] if self.channel and self.channel.L > 2 else 0.0


def reference_alphabet(rate):
    m_b = 2 ** rate
    if abs(m_b - round(m_b)) > 1e-9 or round(m_b) < 2:
        raise InvalidArgumentError(f"THP reference needs an integer rate, got {rate}")
    return int(round(m_b))


def default_alphabet(scheme, rate):
    m_b = reference_alphabet(rate)
    return m_b if scheme == REFERENCE else 2 * m_b


@dataclass(frozen=True)
class GainResult:
    scheme: str
    rate: float
    m_b: int
    c: float
    d: float
    power_ref: float
    power_test: float
    gain_db: float
    n_symbols: int
    seed: int
    error: str | None = None

    def csv_row(self):
        def fmt(v):
            return f"{v:.9g}"

        return [self.scheme, fmt(self.rate), str(self.m_b), fmt(self.c), fmt(self.d),
                fmt(self.power_ref), fmt(self.power_test), fmt(self.gain_db),
                str(self.n_symbols), str(self.seed)]


@functools.lru_cache(maxsize=256)
def _optimum(m_b, taps, rate):
    from .core import PrecodingFilter

    return solve_markov_shaping(ShapingProblem(make_constellation(m_b), PrecodingFilter(taps), rate))


def optimal_solution(m_b, g, rate):
    """Cached optimum of the shaping program for an alphabet size, filter and rate."""
    return _optimum(int(m_b), tuple(g.taps), float(rate))


def madm_symbols(model_solution, n, seed, frame_bits=FRAME_BITS):
    """At least ``n`` amplitudes produced by the distribution matcher from random bits.

    Frames are independent, each restarting from the lowest-symbol context;
    the concatenated output is cut to ``n`` symbols.
    """
    pmf = model_solution.pmf
    q = quantize_conditional(joint_to_markov(pmf))
    pts = np.asarray(pmf.alphabet.points, dtype=np.int64)
    rng = np.random.default_rng(seed)
    chunks, total = [], 0
    while total < n:
        bits = rng.integers(0, 2, frame_bits).tolist()
        frame = encode(bits, q)
        chunks.append(frame.symbols)
        total += len(frame.symbols)
    idx = np.fromiter((s for ch in chunks for s in ch), dtype=np.int64, count=total)
    return pts[idx[:n]]


def scheme_power(config, seed=None):
    """Transmit power of one scheme at the configured channel and rate."""
    ch = config.channel
    if ch is None:
        raise InvalidArgumentError("configuration has no channel")
    g = precoder_from_channel(ch)
    m_b, n, R = config.m_b_base, config.n_symbols, config.rate
    seed = config.seed if seed is None else seed
    scheme = config.scheme
    if scheme == "thp-uniform":
        a = sample_iid(np.full(m_b, 1.0 / m_b), n, seed)
        return estimate_power(thp_precode(a, ch, m_b))
    if scheme in ("thp-mb", "linear-mb"):
        mb = solve_maxwell_boltzmann(make_constellation(m_b), R)
        a = sample_iid(mb.probs, n, seed)
        x = thp_precode(a, ch, m_b) if scheme == "thp-mb" else linear_precode(a, g)
        return estimate_power(x)
    sol = optimal_solution(m_b, g, R)
    if scheme == "prob-precoding-theoretical":
        return sol.power
    return estimate_power(linear_precode(madm_symbols(sol, n, seed), g))


def simulate_point(config):
    """Gain of ``config.scheme`` over THP with uniform symbols at the same point."""
    c, d = config.c, config.d
    ref_cfg = replace(config, scheme=REFERENCE, m_b_base=reference_alphabet(config.rate))
    seed_ref = derive_seed(config.seed, c, d, REFERENCE)
    seed = derive_seed(config.seed, c, d, config.scheme)
    try:
        p_ref = scheme_power(ref_cfg, seed_ref)
        p_test = p_ref if config.scheme == REFERENCE else scheme_power(config, seed)
        gain = shaping_gain_db(p_ref, p_test)
        err = None
    except (InfeasibleRateError, ConvergenceError, InvalidArgumentError) as exc:
        log.warning("point c=%g d=%g %s failed: %s", c, d, config.scheme, exc)
        p_ref = p_test = gain = float("nan")
        err = f"{type(exc).__name__}: {exc}"
    return GainResult(config.scheme, float(config.rate), config.m_b_base, float(c), float(d),
                      p_ref, p_test, gain, config.n_symbols, seed, err)


def run_sweep(schemes, c_grid, d_values):
    """Evaluate every scheme template over the ``(c, d)`` grid.

    Points are independent and seeded from ``(c, d, scheme)``, so the result
    does not depend on evaluation order. Failures are recorded in the row.
    """
    c_grid, d_values = list(c_grid), list(d_values)
    if not c_grid or not d_values or not schemes:
        raise InvalidArgumentError("sweep grids and scheme list must be non-empty")
    results = []
    ref_cache = {}
    for template in schemes:
        for d in d_values:
            for c in c_grid:
                cfg = replace(template, channel=ChannelSpec.from_cd(float(c), float(d)))
                results.append(_cached_point(cfg, ref_cache))
    return results


def _cached_point(cfg, ref_cache):
    # the THP reference is shared by every scheme at a point
    key = (cfg.c, cfg.d, cfg.rate, cfg.n_symbols, cfg.seed)
    if key not in ref_cache:
        ref_cfg = replace(cfg, scheme=REFERENCE, m_b_base=reference_alphabet(cfg.rate))
        ref_cache[key] = simulate_point(ref_cfg)
    ref = ref_cache[key]
    if cfg.scheme == REFERENCE and cfg.m_b_base == ref.m_b:
        return ref
    if ref.error is not None:
        return replace(ref, scheme=cfg.scheme, m_b=cfg.m_b_base)
    seed = derive_seed(cfg.seed, cfg.c, cfg.d, cfg.scheme)
    try:
        p_test = scheme_power(cfg, seed)
        gain, err = shaping_gain_db(ref.power_ref, p_test), None
    except (InfeasibleRateError, ConvergenceError, InvalidArgumentError) as exc:
        log.warning("point c=%g d=%g %s failed: %s", cfg.c, cfg.d, cfg.scheme, exc)
        p_test = gain = float("nan")
        err = f"{type(exc).__name__}: {exc}"
    return GainResult(cfg.scheme, float(cfg.rate), cfg.m_b_base, float(cfg.c), float(cfg.d),
                      ref.power_ref, p_test, gain, cfg.n_symbols, seed, err)


def sweep_csv(results):
    """CSV text for sweep results, floats to 9 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in results:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def read_sweep_csv(text):
    """Parse sweep CSV text into a list of dicts with numeric fields converted."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_HEADER:
        raise InvalidArgumentError(f"unexpected CSV header {reader.fieldnames}")
    rows = []
    for rec in reader:
        row = dict(rec)
        for key in ("R", "c", "d", "power_ref", "power_test", "gain_db"):
            row[key] = float(row[key])
        for key in ("m_b", "n_symbols", "seed"):
            row[key] = int(row[key])
        rows.append(row)
    return rows
