from __future__ import annotations

import os

import pytest

from thinfrac import __version__
from thinfrac.cli import main
from thinfrac.config import ConfigError, RunConfig, parse_config
from thinfrac.scene import dump_scene, split_square


def test_defaults():
    cfg = parse_config("")
    assert (cfg.grid.n, cfg.grid.m) == (64, 16)
    assert cfg.rho == [0.1, 0.05, 0.025, 0.0125]
    assert cfg.bulk.name == "INCOMP_POWER" and cfg.surface.cap == 0.5


@pytest.mark.parametrize("text,match", [
    ("tolerances: {ode: -1e-10}\n", "tolerances.ode must be positive"),
    ("bulk: {name: NEO_HOOKE}\n", r"catalog: \['INCOMP_POWER', 'ORIENT_POWER'\]"),
    ("surface: {name: GRIFFITH}\n", "SURF_QUAD"),
    ("rho: [0.05, 0.1]\n", "strictly decreasing"),
    ("grid: {n: 64, k: 3}\n", "unknown keys"),
    ("sedd: 3\n", "unknown keys"),
    ("rho: [0.1,\n", "line 2"),
    ("delta: [1.5]\n", r"\(0, 1\)"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_digest_tracks_content():
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest()
    b.seed = 1
    assert a.digest() != b.digest()


def _run(tmp_path, args, config=None):
    argv = list(args)
    if config is not None:
        path = tmp_path / "run.yaml"
        path.write_text(config)
        argv += ["--config", str(path)]
    return main(argv)


def test_validate_writes_header_and_report(tmp_path):
    out = tmp_path / "v.csv"
    assert _run(tmp_path, ["validate", "--out", str(out), "--seed", "5"], "samples: 500\n") == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith(f"# thinfrac {__version__} command=validate seed=5 config=")
    assert lines[1] == "density,hypothesis,status,checked,worst,expected"
    assert any(line.startswith("BARENBLATT,B3 growth,fail,") for line in lines)
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".thinfrac-")]


def test_outputs_are_byte_identical_across_runs_and_threads(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = "samples: 300\n"
    assert _run(tmp_path, ["validate", "--out", str(a), "--threads", "1"], cfg) == 0
    assert _run(tmp_path, ["validate", "--out", str(b), "--threads", "4"], cfg) == 0
    assert a.read_bytes() == b.read_bytes()


def test_reduce_and_envelope_tables(tmp_path):
    out = tmp_path / "r.csv"
    assert _run(tmp_path, ["reduce", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()[2:]
    assert rows[0].startswith("cell,0,3,") and rows[-1].startswith("jump,0,1.5,")
    out = tmp_path / "e.csv"
    assert _run(tmp_path, ["envelope", "--out", str(out)], "depth: 1\nbulk: {name: ORIENT_POWER}\n") == 0
    rows = out.read_text().splitlines()[2:]
    assert [r.split(",")[1] for r in rows[:3]] == ["0", "1", "qc"]


def test_maps_table(tmp_path):
    out = tmp_path / "m.csv"
    assert _run(tmp_path, ["maps", "--out", str(out)], "rho: [0.05, 0.025]\n") == 0
    text = out.read_text()
    assert "# crack_opening delta=0.1 w1inf_distance=0.1" in text
    assert len(text.splitlines()) == 1 + 3 + 1 + 4


def test_small_sweep_and_text_format(tmp_path, capsys):
    cfg = "rho: [0.05, 0.025]\ngrid: {n: 16, m: 4}\nformat: text\n"
    assert _run(tmp_path, ["sweep"], cfg) == 0
    out = capsys.readouterr().out
    assert "monotone=true" in out and "lower_bound_ok" in out


def test_recover_with_large_rho_fails_numerically(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert _run(tmp_path, ["recover", "--out", str(out)], "rho: [0.6]\n") == 1
    assert "smaller rho" in capsys.readouterr().err
    assert not out.exists()


def test_config_errors_exit_two(tmp_path, capsys):
    assert _run(tmp_path, ["sweep"], "foo: 1\n") == 2
    assert _run(tmp_path, ["sweep", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert _run(tmp_path, ["validate", "--threads", "0"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_recover_on_a_scene_file(tmp_path):
    scene = tmp_path / "scene.yaml"
    scene.write_text(dump_scene(split_square()))
    out = tmp_path / "rec.csv"
    cfg = f"scene: {scene}\nrho: [0.05]\ngrid: {{n: 8, m: 2}}\nbulk: {{name: ORIENT_POWER}}\n"
    assert _run(tmp_path, ["recover", "--out", str(out)], cfg) == 0
    lines = out.read_text().splitlines()
    assert lines[1].startswith("# rho=0.05 energy=")
    assert len(lines) == 3 + 16 * 16 * 5


@pytest.mark.slow
def test_default_sweep_meets_the_gap_target(tmp_path):
    out = tmp_path / "sweep.csv"
    assert _run(tmp_path, ["sweep", "--out", str(out)]) == 0
    rows = [r.split(",") for r in out.read_text().splitlines() if r and not r.startswith("#")]
    header, body = rows[0], rows[1:]
    assert len(body) == 4
    gap = [float(r[header.index("gap")]) for r in body]
    assert gap[-1] <= 0.02 * 4.5


def test_scientific_notation_without_decimal_point():
    cfg = parse_config("tolerances: {ode: 1e-9, newton: 1E-11}\nsamples: 10000\n")
    assert cfg.tolerances.ode == 1e-9 and cfg.tolerances.newton == 1e-11
    assert isinstance(cfg.samples, int)
