"""Master-equation integrators against closed-form quantum optics results.

The three classic oracles: exponential photon decay of an empty cavity,
the driven-cavity steady state E^2/(kappa^2 + Delta^2), and vacuum Rabi
oscillation at 2g for the two-level reduction. Each has an analytic answer
that never touched the code under test.
"""

import math

import numpy as np
import pytest

from ioncavity.atomic import TWO_PI
from ioncavity.dynamics import (
    MasterEquationProblem,
    evolve,
    hamiltonian_superoperator,
    liouvillian,
    steady_state,
)
from ioncavity.errors import DegenerateSteadyStateError, SolverError
from ioncavity.linalg import (
    DensityMatrix,
    HilbertSpace,
    OperatorMatrix,
    annihilation_operator,
    expectation,
    tensor_product,
)
from ioncavity.model import (
    SystemConfig,
    build_collapse_operators,
    build_H0_transmission,
    build_H_drive,
    build_H_ioncav,
    build_HB,
    composite_space,
    mode_number_operators,
)

KAPPA = 4.1  # MHz, matches the hardware this models


def _single_mode(n_max=3):
    a = annihilation_operator(n_max)
    return a, a.space


def test_empty_cavity_decay_both_integrators():
    a, space = _single_mode(3)
    kap = TWO_PI * KAPPA
    h = OperatorMatrix.zero(space)
    rho0 = DensityMatrix.pure(space, 2)  # two photons
    n_op = a.dagger() @ a
    problem = MasterEquationProblem(h, (math.sqrt(kap) * a,), rho0)
    for method, tol in (("expm", 1e-12), ("rk45", 1e-7)):
        result = evolve(problem, 0.4, observables={"n": n_op}, method=method,
                        n_points=81)
        want = 2.0 * np.exp(-2.0 * kap * result.times)
        np.testing.assert_allclose(result.expectations["n"].real, want,
                                   atol=tol, rtol=tol)
        assert result.metrics["trace_drift"] <= 1e-7
        assert result.metrics["min_eigenvalue"] >= -1e-7


def test_driven_cavity_steady_state_lorentzian():
    # drive weak enough that the cutoff-3 truncation error sits near 1e-9
    a, space = _single_mode(3)
    kap = TWO_PI * KAPPA
    drive = TWO_PI * 0.2
    for delta_mhz in (0.0, 2.0, -7.5):
        delta = TWO_PI * delta_mhz
        h = (-delta) * (a.dagger() @ a) + drive * (a + a.dagger())
        rho = steady_state(h, (math.sqrt(kap) * a,))
        n_val = expectation(rho, a.dagger() @ a).real
        want = drive**2 / (kap**2 + delta**2)
        assert n_val == pytest.approx(want, rel=1e-6)


def test_steady_state_agrees_with_long_time_evolution():
    a, space = _single_mode(2)
    kap = TWO_PI * KAPPA
    h = TWO_PI * 0.3 * (a + a.dagger())
    collapse = (math.sqrt(kap) * a,)
    rho_ss = steady_state(h, collapse)
    problem = MasterEquationProblem(h, collapse, DensityMatrix.pure(space, 0))
    result = evolve(problem, 50.0, n_points=11)
    diff = np.abs(result.final_state.to_dense() - rho_ss.to_dense()).max()
    assert diff < 1e-6


def test_vacuum_rabi_oscillation_two_level():
    cfg = SystemConfig(level_scheme="two_level", kappa_mhz=4.1,
                       gamma_s_mhz=0.0, gamma_d_mhz=1.0, b_field_gauss=0.0)
    # closed system: drop all collapse channels
    space = composite_space(cfg)
    h = build_H_ioncav(cfg)
    g_eff = TWO_PI * cfg.g0_mhz / math.sqrt(2)  # single sigma+ branch
    # |D(-3/2), n+=1, n-=0>; scheme order puts P first
    start = space.index({"atom": 1, "sigma_plus": 1, "sigma_minus": 0})
    excited = space.index({"atom": 0, "sigma_plus": 0, "sigma_minus": 0})
    rho0 = DensityMatrix.pure(space, start)
    proj = OperatorMatrix.from_entries(space, {(excited, excited): 1.0})
    problem = MasterEquationProblem(h, (), rho0)
    t_half = math.pi / (2.0 * g_eff)  # first full transfer
    result = evolve(problem, 2.0 * t_half,
                    sample_times=np.array([0.0, t_half, 2.0 * t_half]),
                    observables={"pe": proj})
    pe = result.expectations["pe"].real
    assert pe[0] == pytest.approx(0.0, abs=1e-12)
    assert pe[1] == pytest.approx(1.0, abs=1e-9)
    assert pe[2] == pytest.approx(0.0, abs=1e-9)


def test_evolution_is_linear_in_the_state():
    a, space = _single_mode(2)
    kap = TWO_PI * KAPPA
    h = TWO_PI * 1.3 * (a + a.dagger())
    collapse = (math.sqrt(kap) * a,)
    rho_a = DensityMatrix.pure(space, 0)
    rho_b = DensityMatrix.pure(space, 1)
    mix = DensityMatrix.mixture(space, [(0, 0.3), (1, 0.7)])
    outs = []
    for rho in (rho_a, rho_b, mix):
        problem = MasterEquationProblem(h, collapse, rho)
        outs.append(evolve(problem, 0.7, n_points=5).final_state.to_dense())
    np.testing.assert_allclose(0.3 * outs[0] + 0.7 * outs[1], outs[2],
                               atol=1e-12)


def test_integrated_emission_matches_trapezoid():
    a, space = _single_mode(2)
    kap = TWO_PI * KAPPA
    h = OperatorMatrix.zero(space)
    n_op = a.dagger() @ a
    problem = MasterEquationProblem(h, (math.sqrt(kap) * a,),
                                    DensityMatrix.pure(space, 1))
    result = evolve(problem, 1.0, n_points=2001, observables={"n": n_op},
                    integrate={"n": n_op})
    # integral of e^{-2 kappa t} over [0, 1]
    want = (1.0 - math.exp(-2.0 * kap)) / (2.0 * kap)
    assert result.integrated_emission["n"] == pytest.approx(want, rel=1e-10)
    # the trapezoid itself carries O(h^2) discretization error
    dense = np.trapezoid(result.expectations["n"].real, result.times)
    assert result.integrated_emission["n"] == pytest.approx(dense, rel=1e-4)


def test_nonuniform_sample_times_consistent():
    a, space = _single_mode(2)
    kap = TWO_PI * KAPPA
    h = TWO_PI * 0.4 * (a + a.dagger())
    problem = MasterEquationProblem(h, (math.sqrt(kap) * a,),
                                    DensityMatrix.pure(space, 0))
    n_op = a.dagger() @ a
    uniform = evolve(problem, 0.8, n_points=9, observables={"n": n_op})
    scattered = evolve(problem, 0.8,
                       sample_times=np.array([0.0, 0.1, 0.4, 0.8]),
                       observables={"n": n_op})
    # t = 0.4 and t = 0.8 appear in both runs
    np.testing.assert_allclose(
        scattered.expectations["n"].real[2:],
        uniform.expectations["n"].real[[4, 8]],
        atol=1e-12,
    )


def test_rk45_tracks_expm_with_pulse(cfg):
    from ioncavity.model import build_H0_raman, build_H_pump, build_HB
    from ioncavity.spectroscopy import _emission_initial_state

    static = build_H0_raman(cfg) + build_HB(cfg) + build_H_ioncav(cfg)
    drive = build_H_pump(cfg, 0.0)
    collapse = build_collapse_operators(cfg)
    problem = MasterEquationProblem(static, collapse,
                                    _emission_initial_state(cfg),
                                    drive_h=drive, envelope=cfg.pulse())
    n_plus, n_minus = mode_number_operators(cfg)
    kwargs = dict(observables={"n": n_plus + n_minus}, n_points=41)
    fast = evolve(problem, 0.4, method="expm", **kwargs)
    slow = evolve(problem, 0.4, method="rk45", **kwargs)
    np.testing.assert_allclose(fast.expectations["n"].real,
                               slow.expectations["n"].real, atol=5e-7)
    assert fast.metrics["trace_drift"] <= 1e-7
    assert fast.metrics["min_eigenvalue"] >= -1e-7


def test_hamiltonian_superoperator_requires_hermitian():
    space = HilbertSpace.single("s", 2)
    lop = OperatorMatrix(space, np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(SolverError):
        hamiltonian_superoperator(lop)


def test_liouvillian_annihilates_steady_state():
    a, space = _single_mode(2)
    kap = TWO_PI * KAPPA
    h = TWO_PI * 0.7 * (a + a.dagger())
    collapse = (math.sqrt(kap) * a,)
    rho = steady_state(h, collapse)
    gen = liouvillian(h, collapse)
    vec = rho.to_dense().reshape(-1)
    assert np.abs(gen @ vec).max() < 1e-9


def test_degenerate_steady_state_reports_dimension(cfg):
    # Without re-preparation the transmission problem keeps four dark
    # sublevels (both S states plus D +1/2, +3/2, which see only the
    # unpopulated polarization); the Zeeman term splits them so only the
    # four populations, not their coherences, are stationary.
    frozen = cfg.with_updates(reset_rate_mhz=0.0)
    h = build_H0_transmission(frozen) + build_HB(frozen) \
        + build_H_drive(frozen) + build_H_ioncav(frozen)
    collapse = build_collapse_operators(frozen)
    with pytest.raises(DegenerateSteadyStateError) as err:
        steady_state(h, collapse)
    assert err.value.dimension == 4
