"""Command-line front end: optimize, encode, decode, simulate, sweep, plot.

Exit codes: 0 ok, 2 infeasible rate or bad configuration, 3 solver
non-convergence, 4 malformed input file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from xml.sax.saxutils import escape

import jsonschema

from .core import ChannelSpec, PrecodingFilter, make_constellation, precoder_from_channel, joint_to_markov
from .errors import (
    ConvergenceError,
    InfeasibleRateError,
    InvalidArgumentError,
    MalformedFrameError,
    TruncatedFrameError,
)
from .madm import (
    FRAME_BITS,
    QuantizedConditional,
    bits_to_bytes,
    bytes_to_bits,
    decode_stream,
    encode_stream,
    frames_from_bytes,
    frames_to_bytes,
    quantize_conditional,
)
from .optimize import ShapingProblem, solve_markov_shaping
from .sim import SCHEMES, SimConfig, read_sweep_csv, run_sweep, sweep_csv

log = logging.getLogger("probprecode")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_MALFORMED = 0, 2, 3, 4

_NUM = {"type": "number"}
_PATH = {"type": "string", "minLength": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m_b": {"type": "integer", "minimum": 2, "maximum": 64},
                "L": {"type": "integer", "minimum": 1},
                "R": _NUM,
                "channel": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"c": _NUM, "d": _NUM},
                    "required": ["c"],
                },
                "taps": {"type": "array", "items": _NUM, "minItems": 1},
            },
            "required": ["R"],
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_symbols": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "schemes": {"type": "array", "items": {"enum": list(SCHEMES)}},
                "m_b_base": {"type": "integer", "minimum": 2, "maximum": 64},
                "c_grid": {"type": "array", "items": _NUM},
                "d_values": {"type": "array", "items": _NUM},
            },
        },
        "io": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "solution": _PATH,
                "tables": _PATH,
                "input": _PATH,
                "output": _PATH,
                "csv": _PATH,
                "svg": _PATH,
            },
        },
    },
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def load_config(path):
    """Read and validate a JSON run file; raise CliError(2) on any problem."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc.message}") from exc
    return cfg


def write_atomic(path, data):
    """Write bytes or text to ``path`` through a temp file and rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read {path}: {exc}") from exc


def _pick(args, cfg, key, flag=None):
    val = getattr(args, flag or key, None)
    if val is None:
        val = cfg.get("io", {}).get(key)
    return val


def filter_from_problem(problem):
    """Precoding filter from either explicit taps or channel c/d, padded to L."""
    if "taps" in problem and "channel" in problem:
        raise CliError(EXIT_CONFIG, "give either taps or channel, not both")
    if "taps" in problem:
        taps = [float(t) for t in problem["taps"]]
    elif "channel" in problem:
        ch = problem["channel"]
        taps = list(precoder_from_channel(ChannelSpec.from_cd(ch["c"], ch.get("d", 0.0))).taps)
    else:
        raise CliError(EXIT_CONFIG, "problem needs taps or channel")
    L = problem.get("L", len(taps))
    if L < len(taps):
        raise CliError(EXIT_CONFIG, f"L={L} shorter than the {len(taps)} filter taps")
    return PrecodingFilter(tuple(taps + [0.0] * (L - len(taps))))


def cmd_optimize(args, cfg):
    problem = cfg.get("problem")
    if not problem or "m_b" not in problem:
        raise CliError(EXIT_CONFIG, "optimize needs problem.m_b and problem.R")
    g = filter_from_problem(problem)
    prob = ShapingProblem(make_constellation(problem["m_b"]), g, float(problem["R"]))
    try:
        sol = solve_markov_shaping(prob)
    except ConvergenceError as exc:
        if exc.solution is not None:
            print(f"not converged: kkt_residual={exc.solution.kkt_residual:.3e}", file=sys.stderr)
        raise
    out = _pick(args, cfg, "solution", "out")
    if out:
        write_atomic(out, sol.to_json())
    tables = cfg.get("io", {}).get("tables")
    if tables:
        write_atomic(tables, quantize_conditional(joint_to_markov(sol.pmf)).to_json())
    print(f"m_b={problem['m_b']} L={g.L} R={prob.rate:g}")
    print(f"power={sol.power:.9g}")
    print(f"entropy={sol.entropy:.9g}")
    print(f"kkt_residual={sol.kkt_residual:.3e}")
    print(f"iterations={sol.iterations}")
    return EXIT_OK


def _load_tables(path):
    if not path:
        raise CliError(EXIT_CONFIG, "a tables file is required (--tables or io.tables)")
    try:
        return QuantizedConditional.from_json(_read_bytes(path).decode("utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_MALFORMED, f"bad tables file {path}: {exc}") from exc


def _io_paths(args, cfg):
    src = args.input or cfg.get("io", {}).get("input")
    dst = _pick(args, cfg, "output", "out")
    if not src or not dst:
        raise CliError(EXIT_CONFIG, "input and --out paths are required")
    return src, dst


def cmd_encode(args, cfg):
    q = _load_tables(_pick(args, cfg, "tables"))
    src, dst = _io_paths(args, cfg)
    frames = encode_stream(bytes_to_bits(_read_bytes(src)), q, FRAME_BITS)
    write_atomic(dst, frames_to_bytes(frames))
    return EXIT_OK


def cmd_decode(args, cfg):
    q = _load_tables(_pick(args, cfg, "tables"))
    src, dst = _io_paths(args, cfg)
    frames = frames_from_bytes(_read_bytes(src))
    if any(s >= q.m_b for f in frames for s in f.symbols):
        raise MalformedFrameError("symbol index outside the table alphabet")
    write_atomic(dst, bits_to_bytes(decode_stream(frames, q)))
    return EXIT_OK


def _templates(cfg, seed):
    problem, sim = cfg.get("problem", {}), cfg.get("sim", {})
    if "R" not in problem:
        raise CliError(EXIT_CONFIG, "problem.R is required")
    schemes = sim.get("schemes") or ["prob-precoding-theoretical"]
    n = sim.get("n_symbols", 10 ** 6)
    out = []
    for s in schemes:
        m_b = sim.get("m_b_base") if s != "thp-uniform" else None
        out.append(SimConfig(s, float(problem["R"]), None, m_b, n, seed))
    return out


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return cfg.get("sim", {}).get("seed", 0)


def _emit_csv(args, cfg, results):
    text = sweep_csv(results)
    out = _pick(args, cfg, "csv", "out")
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)
    for r in results:
        if r.error:
            print(f"warning: c={r.c:g} d={r.d:g} {r.scheme}: {r.error}", file=sys.stderr)


def cmd_simulate(args, cfg):
    ch = cfg.get("problem", {}).get("channel")
    if ch is None:
        raise CliError(EXIT_CONFIG, "simulate needs problem.channel")
    results = run_sweep(_templates(cfg, _seed(args, cfg)), [ch["c"]], [ch.get("d", 0.0)])
    _emit_csv(args, cfg, results)
    return EXIT_OK


def cmd_sweep(args, cfg):
    sim = cfg.get("sim", {})
    c_grid, d_values = sim.get("c_grid", []), sim.get("d_values", [0.0])
    if not c_grid or not d_values:
        raise CliError(EXIT_CONFIG, "empty sweep grid")
    results = run_sweep(_templates(cfg, _seed(args, cfg)), c_grid, d_values)
    _emit_csv(args, cfg, results)
    return EXIT_OK


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def render_svg(rows, width=640, height=420):
    """Line plot of gain_db versus c, one polyline per (scheme, d) series."""
    series = {}
    for r in rows:
        if r["gain_db"] == r["gain_db"]:
            series.setdefault((r["scheme"], r["d"]), []).append((r["c"], r["gain_db"]))
    xs = [p[0] for pts in series.values() for p in pts] or [0.0, 1.0]
    ys = [p[1] for pts in series.values() for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(max(ys), 0.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = 60, 190, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        xv, yv = x0 + (x1 - x0) * i / 5, y0 + (y1 - y0) * i / 5
        parts.append(f'<line x1="{sx(xv):.2f}" y1="{top + ph}" x2="{sx(xv):.2f}" '
                     f'y2="{top + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{sx(xv):.2f}" y="{top + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<line x1="{left - 4}" y1="{sy(yv):.2f}" x2="{left}" y2="{sy(yv):.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.2f}" text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">channel parameter c</text>')
    parts.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {top + ph / 2})">gain over THP [dB]</text>')
    for i, ((scheme, d), pts) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in sorted(pts))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 12 + 16 * i
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(scheme)} d={d:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args, cfg):
    src = args.input or cfg.get("io", {}).get("csv")
    dst = _pick(args, cfg, "svg", "out")
    if not src or not dst:
        raise CliError(EXIT_CONFIG, "plot needs a CSV input and --out")
    try:
        rows = read_sweep_csv(_read_bytes(src).decode("utf-8"))
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_MALFORMED, f"bad CSV {src}: {exc}") from exc
    write_atomic(dst, render_svg(rows))
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def _global_flags(parser):
    parser.add_argument("--config", default=argparse.SUPPRESS, help="JSON run file")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="64-bit seed")
    parser.add_argument("--out", default=argparse.SUPPRESS, help="output path")


def build_parser():
    parser = argparse.ArgumentParser(prog="probprecode", description=__doc__.splitlines()[0])
    _global_flags(parser)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _global_flags(sp)
        if name in ("encode", "decode", "plot"):
            sp.add_argument("input", nargs="?", help="input file")
        if name in ("encode", "decode"):
            sp.add_argument("--tables", help="quantized conditional table JSON")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for key in ("config", "seed", "out", "input", "tables"):
        if not hasattr(args, key):
            setattr(args, key, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise CliError(EXIT_CONFIG, "--seed must be an unsigned 64-bit integer")
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InfeasibleRateError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (MalformedFrameError, TruncatedFrameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
