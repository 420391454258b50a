"""Batch front door: run one named protocol from a config file, emit CSV.

Usage:
    ioncavity-sim <protocol> --config <path> --out <dir> [--set k=v]...
                  [--threads N] [--validate-only]

One protocol per process. Every run writes `<protocol>.csv` (plus `fit.csv`
for protocols that end in a fit) and `manifest.json` with the resolved
config and its content hash. The same config hash always produces
byte-identical CSV bytes; wall-clock data lives only in the manifest.

Exit codes: 0 ok, 2 config error, 3 solver error, 4 fit non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    coupling_pair,
    doppler_corrected_g0,
    dressed_states,
    error_budget,
    estimate_drive_amplitude,
    fit_g0,
)
from .errors import (
    ConfigError,
    DegenerateSteadyStateError,
    ExtrapolationError,
    FitConvergenceError,
    IonCavityError,
    SolverError,
)
from .model import SystemConfig
from .spectroscopy import (
    DispersionCurve,
    SpectrumScan,
    emission_scan,
    extract_raman_shift,
    fit_lorentzian,
    linewidth_fit,
    lorentzian,
    raman_dispersion_curve,
    transmission_scan,
)

PROTOCOLS = (
    "emission-scan",
    "raman-dispersion",
    "fit-g0",
    "transmission-scan",
    "linewidth-fit",
    "dressed-states",
    "error-budget",
    "doppler-correction",
    "estimate-drive",
)


@dataclass(frozen=True)
class RunManifest:
    protocol: str
    version: str
    started_utc: str
    duration_seconds: float
    config: dict
    config_hash: str
    input_hash: str | None
    run_hash: str
    outputs: tuple[str, ...]

    def to_json(self) -> str:
        payload = {
            "protocol": self.protocol,
            "version": self.version,
            "started_utc": self.started_utc,
            "duration_seconds": self.duration_seconds,
            "config": self.config,
            "config_hash": self.config_hash,
            "input_hash": self.input_hash,
            "run_hash": self.run_hash,
            "outputs": list(self.outputs),
        }
        return json.dumps(payload, indent=2) + "\n"


def _jsonable_config(cfg: SystemConfig) -> dict:
    out = {}
    for key, value in cfg.to_dict().items():
        out[key] = repr(value) if isinstance(value, complex) else value
    return out


def resolve_config_path(spec: str) -> Path:
    """Accept a filesystem path or the bare name of a shipped preset."""
    p = Path(spec)
    if p.is_file():
        return p
    name = spec if spec.endswith(".cfg") else spec + ".cfg"
    preset = resources.files("ioncavity") / "presets" / name
    try:
        if preset.is_file():
            with resources.as_file(preset) as real:
                return Path(str(real))
    except (OSError, TypeError):
        pass
    raise ConfigError([f"config: no such file or preset: {spec!r}"])


def _load_config(config_path: str, overrides: list[str]) -> SystemConfig:
    path = resolve_config_path(config_path)
    cfg = SystemConfig.from_file(path)
    if overrides:
        updates = {}
        bad = []
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or not key:
                bad.append(f"--set: expected key=value, got {item!r}")
            else:
                updates[key.strip()] = value.strip()
        if bad:
            raise ConfigError(bad)
        cfg = cfg.with_updates(**updates)
    return cfg.validated()


def _read_input_csv(cfg: SystemConfig) -> tuple[bytes | None, Path | None]:
    if not cfg.input_csv:
        return None, None
    path = Path(cfg.input_csv)
    if not path.is_file():
        raise ConfigError([f"input_csv: no such file: {cfg.input_csv!r}"])
    return path.read_bytes(), path


# ---------------------------------------------------------------------------
# Protocol bodies: each returns (files: {name: text}, stdout lines)
# ---------------------------------------------------------------------------

def _kv_csv(pairs: list[tuple[str, object]]) -> str:
    lines = ["parameter,value"]
    for key, value in pairs:
        if isinstance(value, (float, np.floating)):
            text = repr(float(value))
        else:
            text = str(value)
        lines.append(f"{key},{text}")
    return "\n".join(lines) + "\n"


def _run_emission_scan(cfg, threads):
    scan = emission_scan(cfg, threads=threads)
    files = {"emission-scan.csv": scan.to_csv()}
    notes = [f"peak signal {max(scan.signals):.6g} photons at "
             f"{scan.detunings[int(np.argmax(scan.signals))]:.3f} MHz"]
    shift, shift_err = extract_raman_shift(scan, cfg.delta_p_mhz)
    peak = fit_lorentzian(np.array(scan.detunings), np.array(scan.signals))
    files["fit.csv"] = _kv_csv([
        ("center_mhz", peak.center_mhz),
        ("center_err_mhz", peak.center_err),
        ("hwhm_mhz", peak.hwhm_mhz),
        ("hwhm_err_mhz", peak.hwhm_err),
        ("amplitude", peak.amplitude),
        ("offset", peak.offset),
        ("raman_shift_mhz", shift),
        ("raman_shift_err_mhz", shift_err),
    ])
    notes.append(f"raman shift {shift:+.4f} MHz at delta_p {cfg.delta_p_mhz:+.3f} MHz")
    return files, notes


def _run_raman_dispersion(cfg, threads):
    curve = raman_dispersion_curve(cfg, threads=threads)
    notes = [f"{len(curve.points)} dispersion points"]
    for dp, msg in curve.failures:
        notes.append(f"warning: delta_p={dp:+.3f} MHz failed: {msg}")
    return {"raman-dispersion.csv": curve.to_csv()}, notes


def _run_fit_g0(cfg, threads):
    input_bytes, input_path = _read_input_csv(cfg)
    if input_path is not None:
        curve = DispersionCurve.load(input_path)
        source = f"measured curve from {input_path}"
    else:
        curve = raman_dispersion_curve(cfg, threads=threads)
        if curve.failures:
            raise SolverError(
                "synthesis failed at "
                + ", ".join(f"delta_p={dp}" for dp, _ in curve.failures)
            )
        source = f"synthetic curve at g0={cfg.g0_mhz} MHz"
    fit = fit_g0(curve, cfg, threads=threads)
    samples = ["g0_mhz,chi2"]
    samples += [f"{g!r},{c!r}" for g, c in fit.samples]
    files = {
        "fit-g0.csv": "\n".join(samples) + "\n",
        "fit.csv": fit.to_csv(),
    }
    notes = [source,
             f"fitted g0 = {fit.g0_mhz:.4f} +/- {fit.stderr_mhz:.4f} MHz "
             f"(chi2/dof = {fit.chi2_reduced:.3g}, {fit.n_evaluations} evaluations)"]
    if fit.flat_objective:
        notes.append("warning: objective is flat over the bracket")
    if fit.at_lower_edge or fit.at_upper_edge:
        notes.append("warning: optimum sits at a bracket edge")
    return files, notes


def _run_transmission_scan(cfg, threads):
    scan = transmission_scan(cfg, threads=threads)
    notes = [f"peak signal {max(scan.signals):.6g} photons/us at "
             f"{scan.detunings[int(np.argmax(scan.signals))]:.3f} MHz"]
    return {"transmission-scan.csv": scan.to_csv()}, notes


def _synthesize_sideband_scan(cfg: SystemConfig) -> SpectrumScan:
    """Triple-Lorentzian line with modulation sidebands, for fit exercises."""
    offset = cfg.sideband_offset_mhz
    span = offset + 15.0
    n = max(cfg.scan_points, 121)
    x = np.linspace(-span, span, n)
    y = (lorentzian(x, -offset, cfg.kappa_mhz, 0.3, 0.0)
         + lorentzian(x, 0.0, cfg.kappa_mhz, 1.0, 0.0)
         + lorentzian(x, +offset, cfg.kappa_mhz, 0.3, 0.0))
    return SpectrumScan(
        axis_label="detuning_mhz",
        detunings=tuple(float(v) for v in x),
        signals=tuple(float(v) for v in y),
        signal_errors=tuple(float("nan") for _ in x),
        protocol="linewidth-fit",
        params_hash=cfg.content_hash(),
    )


def _run_linewidth_fit(cfg, threads):
    input_bytes, input_path = _read_input_csv(cfg)
    if input_path is not None:
        scan = SpectrumScan.load(input_path)
        source = f"scan from {input_path}"
    else:
        scan = _synthesize_sideband_scan(cfg)
        source = f"synthetic sideband scan (kappa={cfg.kappa_mhz} MHz)"
    kappa, kappa_err = linewidth_fit(scan, cfg.sideband_offset_mhz)
    files = {
        "linewidth-fit.csv": scan.to_csv(),
        "fit.csv": _kv_csv([
            ("kappa_mhz", kappa),
            ("kappa_err_mhz", kappa_err),
            ("sideband_offset_mhz", cfg.sideband_offset_mhz),
        ]),
    }
    return files, [source, f"kappa = {kappa:.4f} +/- {kappa_err:.4f} MHz"]


def _run_dressed_states(cfg, threads):
    g1, g2 = cfg.dressed_g1_mhz, cfg.dressed_g2_mhz
    if g1 == 0.0 and g2 == 0.0:
        g1, g2 = coupling_pair(cfg.g0_mhz)
        source = f"couplings derived from g0={cfg.g0_mhz} MHz"
    else:
        source = "couplings taken from dressed_g1_mhz/dressed_g2_mhz"
    spectrum = dressed_states(g1, g2)
    vals = ", ".join(f"{v:+.3f}" for v in spectrum.eigenvalues_mhz)
    return (
        {"dressed-states.csv": spectrum.to_csv()},
        [source, f"eigenvalues: {vals} MHz (lambda = {spectrum.lambda_mhz:.4f})"],
    )


def _run_error_budget(cfg, threads):
    input_bytes, input_path = _read_input_csv(cfg)
    measured = DispersionCurve.load(input_path) if input_path is not None else None
    if measured is not None:
        fit = fit_g0(measured, cfg, threads=threads)
        fitted = fit.g0_mhz
        source = f"fitted g0 = {fitted:.4f} MHz from {input_path}"
    else:
        fitted = cfg.g0_mhz
        source = f"reference g0 = {fitted} MHz (config value)"
    budget = error_budget(cfg, fitted, measured_curve=measured, threads=threads)
    notes = [source, "", budget.to_table().rstrip()]
    return {"error-budget.csv": budget.to_csv()}, notes


def _run_doppler_correction(cfg, threads):
    corrected = doppler_corrected_g0(
        cfg.g0_ideal_mhz, cfg.positional_spread_nm, cfg.wavelength_nm
    )
    files = {"doppler-correction.csv": _kv_csv([
        ("g0_ideal_mhz", cfg.g0_ideal_mhz),
        ("positional_spread_nm", cfg.positional_spread_nm),
        ("wavelength_nm", cfg.wavelength_nm),
        ("g0_corrected_mhz", corrected),
    ])}
    return files, [f"corrected g0 = {corrected:.4f} MHz"]


def _run_estimate_drive(cfg, threads):
    if not 0.0 < cfg.peak_ratio <= 1.0:
        raise ConfigError([
            f"peak_ratio: {cfg.peak_ratio} outside (0, 1]; set it to the "
            "measured with-ion/without-ion peak transmission ratio"
        ])
    est = estimate_drive_amplitude(cfg.peak_ratio, cfg, threads=threads)
    files = {
        "estimate-drive.csv": est.curve_csv(),
        "fit.csv": _kv_csv([
            ("peak_ratio", est.ratio),
            ("drive_mhz", est.drive_mhz),
        ]),
    }
    return files, [f"estimated drive amplitude = {est.drive_mhz:.5f} MHz"]


_RUNNERS = {
    "emission-scan": _run_emission_scan,
    "raman-dispersion": _run_raman_dispersion,
    "fit-g0": _run_fit_g0,
    "transmission-scan": _run_transmission_scan,
    "linewidth-fit": _run_linewidth_fit,
    "dressed-states": _run_dressed_states,
    "error-budget": _run_error_budget,
    "doppler-correction": _run_doppler_correction,
    "estimate-drive": _run_estimate_drive,
}


def run(
    protocol: str,
    config_path: str,
    output_dir: str | Path,
    *,
    overrides: list[str] | None = None,
    threads: int = 1,
    validate_only: bool = False,
    log=print,
) -> RunManifest | None:
    """Execute one protocol; returns the manifest (None in validate-only).

    Raises the library error types; `main` maps them to exit codes.
    """
    if protocol not in _RUNNERS:
        raise ConfigError([
            f"protocol: unknown {protocol!r}; choose from {', '.join(PROTOCOLS)}"
        ])
    cfg = _load_config(config_path, overrides or [])
    if validate_only:
        log(f"config OK (hash {cfg.content_hash()[:12]})")
        return None

    out_dir = Path(output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError([f"output_dir: cannot create {output_dir!r}: {exc}"])

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.monotonic()
    files, notes = _RUNNERS[protocol](cfg, threads)
    duration = time.monotonic() - t0

    input_bytes, _ = _read_input_csv(cfg)
    input_hash = (
        hashlib.sha256(input_bytes).hexdigest() if input_bytes is not None else None
    )
    run_hash = hashlib.sha256(
        cfg.to_text().encode() + (input_bytes or b"")
    ).hexdigest()

    for name, text in files.items():
        (out_dir / name).write_text(text)
    manifest = RunManifest(
        protocol=protocol,
        version=__version__,
        started_utc=started,
        duration_seconds=duration,
        config=_jsonable_config(cfg),
        config_hash=cfg.content_hash(),
        input_hash=input_hash,
        run_hash=run_hash,
        outputs=tuple(sorted(files)),
    )
    (out_dir / "manifest.json").write_text(manifest.to_json())

    for line in notes:
        log(line)
    for name in sorted(files):
        log(f"wrote {out_dir / name}")
    log(f"wrote {out_dir / 'manifest.json'}")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ioncavity-sim",
        description="Simulate and analyze single-ion two-mode cavity spectroscopy.",
    )
    parser.add_argument("protocol", choices=PROTOCOLS, help="protocol to run")
    parser.add_argument("--config", required=True,
                        help="config file path or shipped preset name")
    parser.add_argument("--out", default="runs/latest",
                        help="output directory (created if missing)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for scan parallelism")
    parser.add_argument("--validate-only", action="store_true",
                        help="validate the config and exit without writing")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(
            args.protocol,
            args.config,
            args.out,
            overrides=args.overrides,
            threads=max(args.threads, 1),
            validate_only=args.validate_only,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FitConvergenceError, ExtrapolationError) as exc:
        print(f"fit error ({exc.__class__.__name__}): {exc}", file=sys.stderr)
        return 4
    except (SolverError, DegenerateSteadyStateError) as exc:
        print(f"solver error ({exc.__class__.__name__}): {exc}", file=sys.stderr)
        return 3
    except IonCavityError as exc:  # any remaining library failure
        print(f"error ({exc.__class__.__name__}): {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
