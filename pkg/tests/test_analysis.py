"""Dressed states, coupling arithmetic, fits and estimators."""

import math

import numpy as np
import pytest

from ioncavity.analysis import (
    coupling_pair,
    doppler_corrected_g0,
    dressed_states,
    drive_ratio_curve,
    effective_coupling,
    error_budget,
    estimate_drive_amplitude,
    fit_g0,
)
from ioncavity.errors import ConfigError, ExtrapolationError, FitConvergenceError
from ioncavity.spectroscopy import raman_dispersion_curve

rng = np.random.default_rng(1234)


def test_dressed_states_closed_form():
    for _ in range(25):
        g1, g2 = rng.uniform(0.1, 20.0, size=2)
        ds = dressed_states(g1, g2)
        lam = math.hypot(g1, g2)
        assert ds.eigenvalues_mhz == pytest.approx((-lam, 0.0, lam), abs=1e-12)
        h = np.array([[0, 0, g1], [0, 0, g2], [g1, g2, 0]])
        for val, vec in zip(ds.eigenvalues_mhz, ds.eigenvectors):
            v = np.array(vec)
            assert np.linalg.norm(h @ v - val * v) < 1e-12
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        assert ds.dark_state[2] == 0.0


def test_dressed_states_rejects_null_coupling():
    with pytest.raises(ValueError):
        dressed_states(0.0, 0.0)


def test_coupling_pair_from_branching_amplitudes():
    g1, g2 = coupling_pair(15.1)
    assert g1 == pytest.approx(15.1 / math.sqrt(2), abs=1e-12)
    assert g2 == pytest.approx(15.1 / math.sqrt(6), abs=1e-12)
    assert effective_coupling(15.1) == pytest.approx(
        15.1 * math.sqrt(2.0 / 3.0), abs=1e-12
    )


def test_doppler_correction_limits():
    assert doppler_corrected_g0(17.3, 0.0, 866.0) == pytest.approx(17.3)
    # spread far beyond the wavelength averages the standing wave to 1/2
    assert doppler_corrected_g0(17.3, 5e4, 866.0) == pytest.approx(
        17.3 / math.sqrt(2), rel=1e-9
    )
    assert doppler_corrected_g0(17.3, 94.0, 866.0) == pytest.approx(
        15.6086, abs=5e-4
    )
    with pytest.raises(ValueError):
        doppler_corrected_g0(-1.0, 94.0, 866.0)


def test_fit_g0_requires_enough_points(cfg):
    with pytest.raises(FitConvergenceError):
        fit_g0([(-10.0, 5.0, 0.1)] * 4, cfg)


def test_error_budget_rejects_negative_errors(cfg):
    with pytest.raises(ConfigError):
        error_budget(cfg, 15.1, {"kappa_mhz": -0.1},
                     measured_curve=[(-10.0, 5.0, 0.1)] * 9)


def test_estimate_drive_validates_ratio(cfg):
    with pytest.raises(ConfigError):
        estimate_drive_amplitude(0.0, cfg)
    with pytest.raises(ConfigError):
        estimate_drive_amplitude(1.5, cfg)


def test_drive_ratio_curve_monotone_and_invertible(fast_cfg):
    cfg = fast_cfg.with_updates(drive_grid_points=5, scan_points=21)
    drives, ratios = drive_ratio_curve(cfg)
    assert np.all(np.diff(ratios) > 0)
    assert np.all((ratios > 0) & (ratios < 1))
    measured = float(0.5 * (ratios[1] + ratios[2]))
    est = estimate_drive_amplitude(measured, cfg)
    assert drives[1] < est.drive_mhz < drives[2]
    with pytest.raises(ExtrapolationError):
        estimate_drive_amplitude(float(ratios[-1]) * 1.05, cfg)


@pytest.mark.slow
def test_fit_g0_round_trip_reduced_grid(fast_cfg):
    cfg = fast_cfg.with_updates(
        scan_points=21,
        dispersion_delta_p_min_mhz=-15.0,
        dispersion_delta_p_max_mhz=15.0,
        dispersion_delta_p_step_mhz=5.0,
        fit_coarse_points=5,
    )
    truth = raman_dispersion_curve(cfg.with_updates(g0_mhz=15.1), threads=4)
    points = [(dp, d, 0.05) for dp, d, _ in truth.points]
    fit = fit_g0(points, cfg, threads=4)
    assert fit.g0_mhz == pytest.approx(15.1, abs=0.05)
    assert not fit.flat_objective
    assert not (fit.at_lower_edge or fit.at_upper_edge)
    assert fit.n_evaluations >= 8
    # the scan cache rounds out the objective samples
    gs = [g for g, _ in fit.samples]
    assert gs == sorted(gs)
