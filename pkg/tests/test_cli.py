import json
import os
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from probprecode import JointPmf, conditional_entropy
from probprecode.cli import main
from probprecode.optimize import ShapingSolution
from probprecode.sim import read_sweep_csv

SVG_NS = "{http://www.w3.org/2000/svg}"


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def summary(text):
    return dict(line.split("=", 1) for line in text.split() if "=" in line)


def test_optimize_forced_uniform(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": {"m_b": 2, "R": 1.0, "taps": [1, 0.9]}})
    out = tmp_path / "sol.json"
    assert main(["optimize", "--config", cfg, "--out", str(out)]) == 0
    vals = summary(capsys.readouterr().out)
    assert float(vals["power"]) == pytest.approx(1.81)
    assert float(vals["entropy"]) == pytest.approx(1.0)
    assert ShapingSolution.from_json(out.read_text()).power == pytest.approx(1.81)


def test_optimize_infeasible_rate(tmp_path):
    cfg = write_config(tmp_path, {"problem": {"m_b": 4, "R": 2.5, "channel": {"c": 0.5}}})
    assert main(["optimize", "--config", cfg]) == 2


def test_optimize_reevaluated_entropy(tmp_path):
    tables = tmp_path / "q.json"
    cfg = write_config(tmp_path, {
        "problem": {"m_b": 8, "R": 2.0, "channel": {"c": 0.5, "d": 0.0}},
        "io": {"tables": str(tables)}})
    out = tmp_path / "sol.json"
    assert main(["optimize", "--config", cfg, "--out", str(out)]) == 0
    pmf = JointPmf.from_dict(json.loads(out.read_text())["pmf"])
    assert conditional_entropy(pmf) >= 2.0 - 1e-6
    assert json.loads(tables.read_text())["m_b"] == 8


def test_optimize_nonconvergence_exit(tmp_path, monkeypatch):
    from probprecode import cli, errors

    def boom(problem):
        raise errors.ConvergenceError("stuck")

    monkeypatch.setattr(cli, "solve_markov_shaping", boom)
    cfg = write_config(tmp_path, {"problem": {"m_b": 4, "R": 1.5, "channel": {"c": 0.5}}})
    assert main(["optimize", "--config", cfg]) == 3


def test_config_rejects_unknown_keys(tmp_path):
    cfg = write_config(tmp_path, {"problem": {"m_b": 4, "R": 1.5, "colour": 1}})
    assert main(["optimize", "--config", cfg]) == 2
    cfg = write_config(tmp_path, {"extra": {}}, "b.json")
    assert main(["sweep", "--config", cfg]) == 2


def make_tables(tmp_path):
    tables = tmp_path / "q.json"
    cfg = write_config(tmp_path, {
        "problem": {"m_b": 8, "R": 2.0, "channel": {"c": 0.6}},
        "io": {"tables": str(tables)}}, "opt.json")
    assert main(["optimize", "--config", cfg]) == 0
    return str(tables)


def test_encode_decode_round_trip(tmp_path):
    tables = make_tables(tmp_path)
    src = tmp_path / "data.bin"
    src.write_bytes(os.urandom(3000))
    frames, back = tmp_path / "frames.bin", tmp_path / "back.bin"
    assert main(["encode", str(src), "--tables", tables, "--out", str(frames)]) == 0
    assert main(["decode", str(frames), "--tables", tables, "--out", str(back)]) == 0
    assert back.read_bytes() == src.read_bytes()
    first = frames.read_bytes()
    assert main(["encode", str(src), "--tables", tables, "--out", str(frames)]) == 0
    assert frames.read_bytes() == first


def test_encode_empty_file(tmp_path):
    tables = make_tables(tmp_path)
    src = tmp_path / "empty.bin"
    src.write_bytes(b"")
    frames = tmp_path / "frames.bin"
    assert main(["encode", str(src), "--tables", tables, "--out", str(frames)]) == 0
    assert frames.read_bytes() == b""


def test_decode_corrupted_magic(tmp_path):
    tables = make_tables(tmp_path)
    src = tmp_path / "data.bin"
    src.write_bytes(b"abc")
    frames = tmp_path / "frames.bin"
    assert main(["encode", str(src), "--tables", tables, "--out", str(frames)]) == 0
    data = bytearray(frames.read_bytes())
    data[0] ^= 0xFF
    frames.write_bytes(bytes(data))
    out = tmp_path / "back.bin"
    assert main(["decode", str(frames), "--tables", tables, "--out", str(out)]) == 4
    assert not out.exists()


def test_decode_bad_tables(tmp_path):
    bad = tmp_path / "q.json"
    bad.write_text("{\"m_b\": 2}")
    src = tmp_path / "f.bin"
    src.write_bytes(b"")
    assert main(["decode", str(src), "--tables", str(bad), "--out", str(tmp_path / "o")]) == 4


def sweep_config(tmp_path, **sim):
    base = {"n_symbols": 4000, "seed": 11, "schemes": ["thp-uniform", "thp-mb",
                                                        "prob-precoding-theoretical"]}
    base.update(sim)
    return write_config(tmp_path, {"problem": {"R": 2}, "sim": base}, "sweep.json")


def test_sweep_single_point_reference(tmp_path):
    cfg = sweep_config(tmp_path, schemes=["thp-uniform"], c_grid=[0.4], d_values=[0.0])
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    rows = read_sweep_csv(out.read_text())
    assert len(rows) == 1 and rows[0]["gain_db"] == 0.0


def test_sweep_cardinality_and_idempotence(tmp_path):
    cfg = sweep_config(tmp_path, c_grid=[0.0, 0.5, 1.0], d_values=[0.0, -0.3])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--config", cfg, "--out", str(a)]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_sweep_csv(a.read_text())) == 3 * 2 * 3
    c = tmp_path / "c.csv"
    assert main(["sweep", "--config", cfg, "--seed", "12", "--out", str(c)]) == 0
    assert c.read_bytes() != a.read_bytes()


def test_sweep_empty_grid(tmp_path):
    cfg = sweep_config(tmp_path, c_grid=[])
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()


def test_simulate_prints_csv(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": {"R": 2, "channel": {"c": 0.3}},
                                  "sim": {"n_symbols": 2000, "schemes": ["linear-mb"]}})
    assert main(["simulate", "--config", cfg]) == 0
    rows = read_sweep_csv(capsys.readouterr().out)
    assert [r["scheme"] for r in rows] == ["linear-mb"]


def test_plot_svg(tmp_path):
    cfg = sweep_config(tmp_path, c_grid=[0.0, 0.5, 1.0], d_values=[0.0, -0.3])
    csv_path, svg = tmp_path / "s.csv", tmp_path / "s.svg"
    assert main(["sweep", "--config", cfg, "--out", str(csv_path)]) == 0
    assert main(["plot", str(csv_path), "--out", str(svg)]) == 0
    root = ET.fromstring(svg.read_text())
    assert root.tag == SVG_NS + "svg"
    lines = root.findall(f".//{SVG_NS}polyline")
    assert len(lines) == 3 * 2
    for line in lines:
        assert len(line.get("points").split()) == 3
    text = "".join(t.text or "" for t in root.iter(SVG_NS + "text"))
    assert "channel parameter c" in text and "gain" in text
    first = svg.read_bytes()
    assert main(["plot", str(csv_path), "--out", str(svg)]) == 0
    assert svg.read_bytes() == first


def test_plot_bad_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    assert main(["plot", str(bad), "--out", str(tmp_path / "o.svg")]) == 4


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, {"problem": {"m_b": 2, "R": 1.0, "taps": [1, 0.5]}})
    proc = subprocess.run([sys.executable, "-m", "probprecode.cli", "optimize", "--config", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "power=1.25" in proc.stdout
