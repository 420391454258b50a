"""End-to-end CLI runs: exit codes, outputs, manifests, determinism."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ioncavity.cli import main, resolve_config_path, run
from ioncavity.errors import ConfigError

PRESETS = ("paper_fig2", "paper_fig3", "paper_fig5", "paper_tableS1")


def _cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "ioncavity.cli", *args],
        capture_output=True,
        text=True,
    )


def test_presets_resolve_and_validate(tmp_path):
    for name in PRESETS:
        path = resolve_config_path(name)
        assert path.is_file(), name
        assert main([
            "transmission-scan", "--config", name, "--out", str(tmp_path),
            "--validate-only",
        ]) == 0
    with pytest.raises(ConfigError):
        resolve_config_path("paper_fig9")


def test_dressed_states_symmetric_couplings(tmp_path):
    rc = main([
        "dressed-states", "--config", "paper_fig5", "--out", str(tmp_path),
        "--set", "dressed_g1_mhz=1", "--set", "dressed_g2_mhz=1",
    ])
    assert rc == 0
    rows = (tmp_path / "dressed-states.csv").read_text().strip().splitlines()
    vals = sorted(float(r.split(",")[1]) for r in rows[1:])
    root2 = 2.0**0.5
    assert vals == pytest.approx([-root2, 0.0, root2], abs=1e-3)


def test_doppler_correction_paper_numbers(tmp_path):
    assert main([
        "doppler-correction", "--config", "paper_fig3", "--out", str(tmp_path),
    ]) == 0
    table = dict(
        line.split(",")
        for line in (tmp_path / "doppler-correction.csv")
        .read_text().strip().splitlines()[1:]
    )
    assert float(table["g0_corrected_mhz"]) == pytest.approx(15.6086, abs=5e-4)


def test_validate_only_writes_nothing(tmp_path):
    out = tmp_path / "nothing"
    assert main([
        "emission-scan", "--config", "paper_fig2", "--out", str(out),
        "--validate-only",
    ]) == 0
    assert not out.exists()


def test_config_error_exit_code(tmp_path):
    p = _cli("transmission-scan", "--config", "paper_fig5",
             "--out", str(tmp_path), "--set", "kappa_mhz=-4")
    assert p.returncode == 2
    assert "kappa_mhz" in p.stderr
    p = _cli("transmission-scan", "--config", "no_such_file.cfg",
             "--out", str(tmp_path))
    assert p.returncode == 2


def test_solver_error_exit_code(tmp_path):
    # without re-preparation the steady state is degenerate
    p = _cli("transmission-scan", "--config", "paper_fig5",
             "--out", str(tmp_path), "--set", "reset_rate_mhz=0",
             "--set", "scan_points=5")
    assert p.returncode == 3
    assert "degenerate" in p.stderr


def test_fit_error_exit_code(tmp_path):
    p = _cli("estimate-drive", "--config", "paper_fig5",
             "--out", str(tmp_path), "--set", "peak_ratio=0.001",
             "--set", "drive_grid_points=4", "--set", "scan_points=11")
    assert p.returncode == 4
    assert "outside computed range" in p.stderr


def test_unknown_protocol_rejected(tmp_path):
    p = _cli("make-coffee", "--config", "paper_fig5", "--out", str(tmp_path))
    assert p.returncode == 2


def test_manifest_and_byte_determinism(tmp_path):
    outs = []
    for sub, threads in (("a", "1"), ("b", "3")):
        out = tmp_path / sub
        assert main([
            "transmission-scan", "--config", "paper_fig5", "--out", str(out),
            "--set", "scan_points=21", "--threads", threads,
        ]) == 0
        outs.append(out)
    csv_a = (outs[0] / "transmission-scan.csv").read_bytes()
    csv_b = (outs[1] / "transmission-scan.csv").read_bytes()
    assert csv_a == csv_b
    man_a = json.loads((outs[0] / "manifest.json").read_text())
    man_b = json.loads((outs[1] / "manifest.json").read_text())
    assert man_a["config_hash"] == man_b["config_hash"]
    assert man_a["run_hash"] == man_b["run_hash"]
    assert man_a["protocol"] == "transmission-scan"
    assert man_a["outputs"] == ["transmission-scan.csv"]
    assert man_a["config"]["scan_points"] == 21
    assert man_a["version"]


def test_emission_scan_outputs(tmp_path):
    manifest = run(
        "emission-scan", "paper_fig2", tmp_path,
        overrides=["scan_points=11"], threads=2, log=lambda *_: None,
    )
    assert set(manifest.outputs) == {"emission-scan.csv", "fit.csv"}
    scan_lines = (tmp_path / "emission-scan.csv").read_text().splitlines()
    assert scan_lines[0].startswith("# protocol=emission-scan, params hash=")
    assert scan_lines[1] == "detuning_mhz,signal,signal_error"
    assert len(scan_lines) == 13
    fit = dict(
        line.split(",")
        for line in (tmp_path / "fit.csv").read_text().strip().splitlines()[1:]
    )
    assert "raman_shift_mhz" in fit


def test_linewidth_fit_round_trip_through_files(tmp_path):
    out1 = tmp_path / "synth"
    run("linewidth-fit", "paper_fig5", out1, log=lambda *_: None)
    fit = dict(
        line.split(",")
        for line in (out1 / "fit.csv").read_text().strip().splitlines()[1:]
    )
    assert float(fit["kappa_mhz"]) == pytest.approx(4.1, abs=1e-6)

    # feed the emitted scan back in through input_csv
    out2 = tmp_path / "refit"
    run(
        "linewidth-fit", "paper_fig5", out2,
        overrides=[f"input_csv={out1 / 'linewidth-fit.csv'}"],
        log=lambda *_: None,
    )
    fit2 = dict(
        line.split(",")
        for line in (out2 / "fit.csv").read_text().strip().splitlines()[1:]
    )
    assert float(fit2["kappa_mhz"]) == pytest.approx(4.1, abs=1e-6)
    man = json.loads((out2 / "manifest.json").read_text())
    assert man["input_hash"]


def test_set_override_round_trip(tmp_path):
    manifest = run(
        "dressed-states", "paper_fig5", tmp_path,
        overrides=["g0_mhz=10.0"], log=lambda *_: None,
    )
    assert manifest.config["g0_mhz"] == 10.0
    rows = (tmp_path / "dressed-states.csv").read_text().strip().splitlines()
    top = float(rows[-1].split(",")[1])
    assert top == pytest.approx(10.0 * np.sqrt(2.0 / 3.0), abs=1e-9)
