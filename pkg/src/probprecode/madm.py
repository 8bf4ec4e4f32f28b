"""Markovian arithmetic distribution matching.

Uniform bits are mapped to a variable-length symbol sequence whose
transitions follow a target conditional distribution, and back. Both sides
track a *source* interval (refined by fair bits) and a *code* interval
(refined by symbols, using the transition row of the current context).

Intervals are exact. Source intervals are ``[m, m+1) / 2**k`` after ``k``
bits; code intervals are ``[lo, lo+w) / 2**(32 n)`` after ``n`` symbols since
every quantized row has denominator ``2**32``. Python integers carry the
numerators, so nothing is ever rounded.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
import json
import struct

import numpy as np

from .errors import (
    DegenerateContextError,
    DegenerateIntervalError,
    InvalidArgumentError,
    MalformedFrameError,
    TruncatedFrameError,
)

PREC_BITS = 32
TOTAL = 1 << PREC_BITS
Q_MIN = 1 << 12
FRAME_BITS = 512

MAGIC = 0xAD
VERSION = 0x01
_HEADER = struct.Struct(">BBII")


@dataclass(frozen=True)
class Interval:
    """Half-open interval ``[lo, hi)`` inside ``[0, 1)`` with rational endpoints."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        lo, hi = Fraction(self.lo), Fraction(self.hi)
        if not (0 <= lo < hi <= 1):
            raise InvalidArgumentError(f"invalid interval [{lo}, {hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self):
        return self.hi - self.lo


UNIT = Interval(Fraction(0), Fraction(1))


def identifies(a, b):
    """True when ``a`` is contained in ``b``."""
    return b.lo <= a.lo and a.hi <= b.hi


def refine_interval(interval, index, dist):
    """Child ``index`` of ``interval`` when it is partitioned by the CMF of ``dist``.

    ``dist`` holds non-negative weights (integers, fractions or floats); they
    are normalized by their sum.
    """
    weights = [Fraction(w) for w in dist]
    if not 0 <= index < len(weights):
        raise InvalidArgumentError(f"index {index} outside a row of {len(weights)}")
    total = sum(weights)
    if weights[index] == 0:
        raise DegenerateIntervalError(f"index {index} has zero probability")
    below = sum(weights[:index])
    w = interval.width
    return Interval(interval.lo + w * below / total,
                    interval.lo + w * (below + weights[index]) / total)


@dataclass(frozen=True)
class QuantizedConditional:
    """Transition rows as integers with denominator ``2**32``.

    ``rows[i]`` is the row of the context whose symbol indices, oldest first,
    spell ``i`` in base ``m_b``. Order 0 has a single row.
    """

    m_b: int
    context_order: int
    rows: tuple

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in row) for row in self.rows)
        if len(rows) != self.m_b ** self.context_order:
            raise InvalidArgumentError(
                f"expected {self.m_b ** self.context_order} rows, got {len(rows)}")
        for i, row in enumerate(rows):
            if len(row) != self.m_b or sum(row) != TOTAL or min(row) < Q_MIN:
                raise InvalidArgumentError(f"row {i} is not a valid quantized row")
        object.__setattr__(self, "rows", rows)
        cums = []
        for row in rows:
            cum = [0]
            for v in row:
                cum.append(cum[-1] + v)
            cums.append(tuple(cum))
        object.__setattr__(self, "_cums", tuple(cums))

    @property
    def n_contexts(self):
        return len(self.rows)

    def context_index(self, context):
        idx = 0
        for s in context:
            idx = idx * self.m_b + int(s)
        return idx

    def context_tuple(self, index):
        out = []
        for _ in range(self.context_order):
            index, s = divmod(index, self.m_b)
            out.append(s)
        return tuple(reversed(out))

    @property
    def table(self):
        return {self.context_tuple(i): row for i, row in enumerate(self.rows)}

    def row(self, context):
        return self.rows[self.context_index(context)]

    def probabilities(self):
        """Rows as a float array of shape ``(n_contexts, m_b)``."""
        return np.array(self.rows, dtype=float) / TOTAL

    def to_dict(self):
        rows = {",".join(str(s) for s in self.context_tuple(i)): list(row)
                for i, row in enumerate(self.rows)}
        return {"m_b": self.m_b, "context_order": self.context_order, "rows": rows}

    @classmethod
    def from_dict(cls, obj):
        try:
            m_b, order, rows = int(obj["m_b"]), int(obj["context_order"]), obj["rows"]
            table = [None] * (m_b ** order)
            for key, row in rows.items():
                ctx = tuple(int(s) for s in key.split(",")) if key else ()
                if len(ctx) != order or any(not 0 <= s < m_b for s in ctx):
                    raise InvalidArgumentError(f"bad context key {key!r}")
                idx = 0
                for s in ctx:
                    idx = idx * m_b + s
                table[idx] = row
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InvalidArgumentError(f"malformed quantized table: {exc}") from None
        if any(r is None for r in table):
            raise InvalidArgumentError("quantized table is missing contexts")
        return cls(m_b, order, tuple(table))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def quantize_row(row, q_min=Q_MIN, total=TOTAL):
    """Scale a probability row to integers summing to ``total``, each ``>= q_min``.

    Entries below the floor are raised to it and the deficit is removed from
    the other entries in proportion to their excess over the floor; the
    result is rounded by largest remainder.
    """
    p = np.asarray(row, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)) or not np.any(p > 0):
        raise DegenerateContextError(f"row {row!r} has no symbol with positive probability")
    if len(p) * q_min > total:
        raise InvalidArgumentError("floor too large for the row length")
    target = p / p.sum() * total
    low = target < q_min
    if low.any():
        deficit = float(np.sum(q_min - target[low]))
        excess = target[~low] - q_min
        target[~low] -= deficit * excess / excess.sum()
        target[low] = q_min
    base = np.floor(target).astype(np.int64)
    short = int(total - base.sum())
    order = sorted(range(len(p)), key=lambda i: (-(target[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    out = [int(v) for v in base]
    if sum(out) != total or min(out) < q_min:
        raise DegenerateContextError(f"could not quantize row {row!r}")
    return tuple(out)


def quantize_conditional(model):
    """Quantize every transition row of a Markov shaping model."""
    rows = tuple(quantize_row(r) for r in model.transitions)
    return QuantizedConditional(model.m_b, model.order - 1, rows)


def uniform_table(m_b, context_order=0):
    """Table with equal rows; ``m_b`` must be a power of two for exact halves."""
    row = quantize_row(np.ones(m_b))
    return QuantizedConditional(m_b, context_order, (row,) * (m_b ** context_order))


def quantized_entropy_rate(q):
    """Entropy rate in bits/symbol of the Markov chain defined by a quantized table."""
    from .core import stationary_distribution

    P = q.probabilities()
    pi = stationary_distribution(P, q.m_b, q.context_order + 1)
    return float(-np.sum(pi[:, None] * P * np.log2(P)))


@dataclass(frozen=True)
class MadmFrame:
    n_bits: int
    symbols: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    def __len__(self):
        return len(self.symbols)


def _initial_context(q, c_init):
    if c_init is None:
        return 0
    c_init = tuple(c_init)
    if len(c_init) != q.context_order or any(not 0 <= s < q.m_b for s in c_init):
        raise InvalidArgumentError(f"initial context {c_init} does not fit the table")
    return q.context_index(c_init)


def encode(bits, q, c_init=None):
    """Map a bit sequence to symbol indices.

    After each bit refines the source interval, symbols are emitted while the
    source interval lies inside a child of the code interval. Once the input
    is exhausted the code interval is refined greedily, always into the
    child that overlaps the source interval most (lowest index on ties),
    until it lies inside the source interval.

    ``c_init`` is the context before the first symbol, as symbol indices;
    the default is the all-lowest-symbol context.
    """
    bits = [int(b) for b in bits]
    if not bits:
        raise InvalidArgumentError("cannot encode an empty bit sequence")
    if any(b not in (0, 1) for b in bits):
        raise InvalidArgumentError("bits must be 0 or 1")
    m_b = q.m_b
    n_ctx = q.n_contexts
    cums, rows = q._cums, q.rows
    ctx = _initial_context(q, c_init)

    out = []
    m, k = 0, 0          # source [m, m+1) / 2**k
    lo, w, e = 0, 1, 0   # code [lo, lo+w) / 2**e

    for bit in bits:
        m = 2 * m + bit
        k += 1
        while True:
            cum = cums[ctx]
            ec = e + PREC_BITS
            if k <= ec:
                sh = ec - k
                off = (m << sh) - (lo << PREC_BITS)
                j = bisect_right(cum, off // w) - 1
                if off + (1 << sh) > w * cum[j + 1]:
                    break
            else:
                sh = k - ec
                off = m - (lo << (PREC_BITS + sh))
                j = bisect_right(cum, (off >> sh) // w) - 1
                if off + 1 > (w * cum[j + 1]) << sh:
                    break
            out.append(j)
            lo = (lo << PREC_BITS) + w * cum[j]
            w *= rows[ctx][j]
            e = ec
            ctx = (ctx * m_b + j) % n_ctx

    # finalization: shrink the code interval into the source interval
    while True:
        if e >= k:
            sl = m << (e - k)
            if lo >= sl and lo + w <= sl + (1 << (e - k)):
                break
        else:
            if (lo << (k - e)) >= m and ((lo + w) << (k - e)) <= m + 1:
                break
        cum = cums[ctx]
        ec = e + PREC_BITS
        if k <= ec:
            sh = ec - k
            s_lo, s_hi = m << sh, (m + 1) << sh
            base, scale = lo << PREC_BITS, w
        else:
            sh = k - ec
            s_lo, s_hi = m, m + 1
            base, scale = lo << (PREC_BITS + sh), w << sh
        best_j, best_ov = -1, -1
        for j in range(m_b):
            c_lo = base + scale * cum[j]
            c_hi = base + scale * cum[j + 1]
            ov = min(c_hi, s_hi) - max(c_lo, s_lo)
            if ov > best_ov:
                best_j, best_ov = j, ov
        j = best_j
        out.append(j)
        lo = (lo << PREC_BITS) + w * cum[j]
        w *= rows[ctx][j]
        e = ec
        ctx = (ctx * m_b + j) % n_ctx

    return MadmFrame(len(bits), tuple(out))


def decode(frame, q, c_init=None):
    """Recover the ``frame.n_bits`` source bits from a frame's symbols."""
    n_bits = frame.n_bits
    m_b = q.m_b
    n_ctx = q.n_contexts
    cums, rows = q._cums, q.rows
    ctx = _initial_context(q, c_init)

    bits = []
    m, k = 0, 0
    lo, w, e = 0, 1, 0
    symbols = iter(frame.symbols)
    while len(bits) < n_bits:
        try:
            j = next(symbols)
        except StopIteration:
            raise TruncatedFrameError(
                f"frame ended after {len(bits)} of {n_bits} bits") from None
        if not 0 <= j < m_b:
            raise MalformedFrameError(f"symbol index {j} outside alphabet of {m_b}")
        cum = cums[ctx]
        lo = (lo << PREC_BITS) + w * cum[j]
        w *= rows[ctx][j]
        e += PREC_BITS
        ctx = (ctx * m_b + j) % n_ctx
        while len(bits) < n_bits:
            # midpoint of the source interval is (2m+1) / 2**(k+1)
            if e >= k + 1:
                mid = (2 * m + 1) << (e - k - 1)
                if lo + w <= mid:
                    bit = 0
                elif lo >= mid:
                    bit = 1
                else:
                    break
            else:
                sh = k + 1 - e
                mid = 2 * m + 1
                if (lo + w) << sh <= mid:
                    bit = 0
                elif lo << sh >= mid:
                    bit = 1
                else:
                    break
            bits.append(bit)
            m = 2 * m + bit
            k += 1
    return bits


def measured_rate(frames):
    """Source bits per emitted symbol over a collection of frames."""
    frames = list(frames)
    if not frames:
        raise InvalidArgumentError("no frames")
    n_sym = sum(len(f.symbols) for f in frames)
    if n_sym == 0:
        raise InvalidArgumentError("frames contain no symbols")
    return sum(f.n_bits for f in frames) / n_sym


def encode_stream(bits, q, frame_bits=FRAME_BITS, c_init=None):
    """Split ``bits`` into independent frames of ``frame_bits`` and encode each.

    The last frame carries whatever bits remain. Every frame restarts from
    ``c_init``.
    """
    bits = list(bits)
    return [encode(bits[i:i + frame_bits], q, c_init)
            for i in range(0, len(bits), frame_bits)]


def decode_stream(frames, q, c_init=None):
    out = []
    for f in frames:
        out.extend(decode(f, q, c_init))
    return out


def frame_to_bytes(frame):
    """Serialize a frame: magic, version, ``k`` and ``n`` as big-endian u32, then u8 symbols."""
    if any(not 0 <= s < 256 for s in frame.symbols):
        raise InvalidArgumentError("symbol indices must fit in one byte")
    return _HEADER.pack(MAGIC, VERSION, frame.n_bits, len(frame.symbols)) + bytes(frame.symbols)


def frames_to_bytes(frames):
    return b"".join(frame_to_bytes(f) for f in frames)


def frames_from_bytes(data):
    """Parse a concatenation of serialized frames."""
    frames = []
    pos = 0
    data = bytes(data)
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise MalformedFrameError("truncated frame header")
        magic, version, k, n = _HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise MalformedFrameError(f"bad magic byte 0x{magic:02x}")
        if version != VERSION:
            raise MalformedFrameError(f"unsupported frame version {version}")
        pos += _HEADER.size
        if len(data) - pos < n:
            raise MalformedFrameError("frame body shorter than its header states")
        frames.append(MadmFrame(k, tuple(data[pos:pos + n])))
        pos += n
    return frames


def frame_from_bytes(data):
    frames = frames_from_bytes(data)
    if len(frames) != 1:
        raise MalformedFrameError(f"expected one frame, found {len(frames)}")
    return frames[0]


def bytes_to_bits(data):
    """Bits of ``data``, most significant bit of each byte first."""
    return [int(b) for b in np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))]


def bits_to_bytes(bits):
    bits = list(bits)
    if len(bits) % 8:
        raise InvalidArgumentError("bit count is not a multiple of 8")
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def symbol_values(symbols, alphabet):
    """Map symbol indices to constellation amplitudes."""
    return np.asarray(alphabet.points, dtype=float)[np.asarray(symbols, dtype=np.int64)]


__all__ = [
    "FRAME_BITS", "Interval", "MadmFrame", "Q_MIN", "QuantizedConditional", "TOTAL",
    "bits_to_bytes", "bytes_to_bits", "decode", "decode_stream", "encode", "encode_stream",
    "frame_from_bytes", "frame_to_bytes", "frames_from_bytes", "frames_to_bytes",
    "identifies", "measured_rate", "quantize_conditional", "quantize_row",
    "quantized_entropy_rate", "refine_interval", "symbol_values", "uniform_table",
]
