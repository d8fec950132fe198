import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadmod import cli
from quadmod.config import (
    CATALOGUE,
    PRESETS,
    ExperimentConfig,
    ExperimentKind,
    MonteCarloSettings,
    build_constellation,
    dump_config,
    parse_config,
    preset,
    to_dict,
    with_overrides,
)
from quadmod.constellations import read_constellation
from quadmod.errors import ConfigError
from quadmod.experiments import compare_gain, run_experiment, stream_id
from quadmod.report import read_csv

SMALL_SWEEP = """
name = "small"
experiment = "SerSweep"
seed = 11
esn0_grid_db = {{ start = 6.0, stop = 15.0, step = 1.0 }}
constellations = ["bi-orthogonal", {{ kind = "dual", base = "QPSK" }}]
comparisons = [{{ a = "bi-orthogonal", b = "dual QPSK" }}]
target_ser = 1e-3
output_dir = "{out}"

[monte_carlo]
min_errors = 50
max_symbols = {max_symbols}
batch = 8192
ser_floor = 1e-4
refine_step_db = 0.5
refine_min_errors = 50
"""


def small(tmp_path, name="out", max_symbols=2_000_000):
    return parse_config(SMALL_SWEEP.format(out=tmp_path / name, max_symbols=max_symbols))


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_roundtrip(name):
    cfg = preset(name)
    text = dump_config(cfg)
    again = parse_config(text)
    assert to_dict(again) == to_dict(cfg)
    assert dump_config(again) == text


def test_roundtrip_of_range_grid(tmp_path):
    cfg = small(tmp_path)
    assert cfg.esn0_grid_db == tuple(float(x) for x in range(6, 16))
    assert to_dict(parse_config(dump_config(cfg))) == to_dict(cfg)


@given(
    st.lists(st.floats(-5, 40, allow_nan=False).map(lambda x: round(x, 2)), min_size=1, max_size=6),
    st.integers(0, 2**63),
    st.floats(1e-7, 0.4),
    st.integers(1, 5000),
)
@settings(max_examples=30, deadline=None)
def test_roundtrip_property(grid, seed, target, min_errors):
    cfg = ExperimentConfig(
        ExperimentKind.SER_SWEEP,
        constellations=("88-LAM", "dual QPSK"),
        esn0_grid_db=tuple(grid),
        seed=seed,
        target_ser=target,
        monte_carlo=MonteCarloSettings(min_errors=min_errors),
    )
    assert to_dict(parse_config(dump_config(cfg))) == to_dict(cfg)


def test_every_catalogue_entry_builds():
    for name in CATALOGUE:
        c = build_constellation(name)
        assert abs(c.avg_energy - 1) < 1e-12
        assert c.name == name


def test_preset_layout():
    assert len(PRESETS) == 6
    papr = preset("tab-papr")
    assert len(papr.constellations) == 11 and papr.papr.include_alternating
    # one preset per acceptance row family
    pairs = {p for name in PRESETS for p in preset(name).comparisons}
    assert ("256-LAM", "dual 16-QAM") in pairs and ("hex-cyl-64-PSK", "dual 8-PSK") in pairs
    assert preset("fig-ser-cyl").monte_carlo.refine_min_errors >= 500


@pytest.mark.parametrize(
    "text, fragment",
    [
        ('experiment = "SerSweep"\nconstellations = ["88-LAM"]\nesn0_grid_db = []\n', "grid must not be empty"),
        ('experiment = "Bogus"\n', "unknown kind"),
        ('experiment = "SerSweep"\nesn0_grid_db = [1.0]\nconstellations = ["nope"]\n', "nope"),
        ('experiment = "SerSweep"\nesn0_grid_db = [1.0]\nconstellations = ["88-LAM"]\nfoo = 1\n', "foo"),
        ('experiment = "SerSweep"\nesn0_grid_db = [1.0]\nconstellations = ["88-LAM"]\n'
         'comparisons = [{ a = "88-LAM", b = "x" }]\n', "'x'"),
        ("experiment = [\n", "<config>"),
    ],
)
def test_validation_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("[", r"\[")):
        parse_config(text)


def test_error_names_line():
    text = 'name = "x"\nexperiment = "SerSweep"\nconstellations = ["88-LAM"]\nesn0_grid_db = []\n'
    with pytest.raises(ConfigError, match=r"cfg.toml:4: esn0_grid_db"):
        parse_config(text, "cfg.toml")


def test_overrides():
    cfg = with_overrides(preset("fig-ser-cyl"), seed=5, output_dir="elsewhere")
    assert cfg.seed == 5 and cfg.output_dir == "elsewhere"
    assert cfg.esn0_grid_db == preset("fig-ser-cyl").esn0_grid_db


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def test_stream_ids_are_key_functions():
    assert stream_id(0, 5.25) != stream_id(1, 5.25)
    assert stream_id(0, 5.25) != stream_id(0, 5.5)
    assert stream_id(0, 5.25) != stream_id(0, 5.25, refined=True)
    assert stream_id(2, 7.0) == stream_id(2, 7.0000000001)


def test_compare_gain_identical_curves():
    curve = [(x, 10 ** (-x / 3)) for x in np.arange(0, 20, 0.5)]
    rep = compare_gain({"a": curve, "b": list(curve)}, 1e-4, [("a", "b")], {"a": 4, "b": 4})
    assert rep.get("a", "b").gain_db == 0.0


def test_compare_gain_refers_to_ebn0():
    a = [(x, 10 ** (-(x - 10) / 2)) for x in np.arange(0, 30, 0.5)]
    rep = compare_gain({"a": a, "b": a}, 1e-4, [("a", "b")], {"a": 3.0, "b": 4.0})
    g = rep.get("a", "b")
    assert g.gain_esn0_db == 0.0
    # same Es/N0 spread over fewer bits costs energy per bit
    assert g.gain_db == pytest.approx(-10 * math.log10(4 / 3))


def test_small_sweep_outputs(tmp_path):
    cfg = small(tmp_path)
    res = run_experiment(cfg, figures=True)
    names = {f.name for f in res.files}
    assert {"config.toml", "ser.csv", "ser.dat", "ser.png", "gains.csv", "summary.json"} <= names
    rows = read_csv(tmp_path / "out" / "ser.csv")
    assert {r["constellation"] for r in rows} == {"bi-orthogonal", "dual QPSK"}
    gains = read_csv(tmp_path / "out" / "gains.csv")
    assert float(gains[0]["gain_db"]) == pytest.approx(res.gains.pairs[0].gain_db)
    # refined points sit on the finer grid
    xs = {float(r["esn0_db"]) for r in rows}
    assert any(x % 1 for x in xs)
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["underresolved"] == []
    dat = (tmp_path / "out" / "ser.dat").read_text()
    assert dat.count("\n\n\n") == 2


def test_reproducible_bytes_and_jobs(tmp_path):
    a = run_experiment(small(tmp_path, "a"), figures=False)
    b = run_experiment(small(tmp_path, "b"), jobs=2, figures=False)
    assert a.gains == b.gains
    for f in ("ser.csv", "ser.dat", "gains.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_papr_table_small(tmp_path):
    cfg = with_overrides(preset("tab-papr"), output_dir=str(tmp_path / "p"))
    from dataclasses import replace

    cfg = replace(cfg, papr=replace(cfg.papr, n_symbols=5000))
    run_experiment(cfg, figures=False)
    rows = read_csv(tmp_path / "p" / "papr.csv")
    assert len(rows) == 12
    assert rows[9]["modulation"] == "bi-orthogonal alt."
    assert len(read_csv(tmp_path / "p" / "peak_constraint.csv")) == 11


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_list_presets(capsys):
    assert cli.main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in PRESETS)


def test_cli_export(tmp_path):
    target = tmp_path / "lam.txt"
    assert cli.main(["export-constellation", "88-LAM", "--out", str(target)]) == 0
    c = read_constellation(target)
    assert len(c) == 88 and np.array_equal(c.points, build_constellation("88-LAM").points)
    assert cli.main(["export-constellation", "no-such", "--out", str(target)]) == 2


def test_cli_validation_error_writes_nothing(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(f'experiment = "SerSweep"\nconstellations = ["88-LAM"]\nesn0_grid_db = []\n'
                   f'output_dir = "{tmp_path / "o"}"\n')
    assert cli.main(["run", str(cfg)]) == 2
    assert not (tmp_path / "o").exists()
    assert cli.main(["run", "not-a-preset"]) == 2
    assert cli.main(["bogus-command"]) == 2


def test_cli_underresolved_keeps_outputs(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL_SWEEP.format(out=tmp_path / "u", max_symbols=8192))
    assert cli.main(["run", str(cfg), "--no-figures"]) == 3
    summary = json.loads((tmp_path / "u" / "summary.json").read_text())
    assert summary["underresolved"] or summary.get("failed_comparisons")
    assert (tmp_path / "u" / "ser.csv").exists()


def test_cli_seed_and_out_override(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL_SWEEP.format(out=tmp_path / "ignored", max_symbols=2_000_000))
    assert cli.main(["run", str(cfg), "--seed", "3", "--out", str(tmp_path / "o"), "--no-figures"]) == 0
    assert "seed = 3" in (tmp_path / "o" / "config.toml").read_text()
    assert not (tmp_path / "ignored").exists()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "quadmod", "list-presets"], capture_output=True, text=True)
    assert r.returncode == 0 and "tab-papr" in r.stdout
