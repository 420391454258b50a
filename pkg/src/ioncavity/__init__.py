"""Simulation and analysis toolkit for a single ion in a two-mode cavity.

Forward-simulates cavity-assisted Raman emission and weak-drive transmission
for an eight-level ion coupled to two degenerate polarization modes, and
provides the estimation layer on top: dispersion-curve extraction, coupling
fits, error budgets and drive calibration.
"""

from .analysis import (
    DressedSpectrum,
    DriveEstimate,
    ErrorBudget,
    FitResult,
    coupling_pair,
    doppler_corrected_g0,
    dressed_states,
    drive_ratio_curve,
    effective_coupling,
    error_budget,
    estimate_drive_amplitude,
    fit_g0,
)
from .atomic import LevelScheme, MagneticEnvironment, Sublevel, clebsch_gordan, wigner_3j, zeeman_shift
from .dynamics import (
    MasterEquationProblem,
    TrajectoryResult,
    evolve,
    liouvillian,
    steady_state,
)
from .errors import (
    ConfigError,
    DegenerateSteadyStateError,
    DimensionMismatchError,
    ExtrapolationError,
    FitConvergenceError,
    IonCavityError,
    SolverError,
    SpaceMismatchError,
)
from .linalg import DensityMatrix, HilbertSpace, OperatorMatrix, annihilation_operator, expectation, tensor_product
from .model import PulseShape, SystemConfig
from .spectroscopy import (
    DispersionCurve,
    LorentzianFit,
    SpectrumScan,
    TripleLorentzianFit,
    emission_scan,
    extract_raman_shift,
    fit_lorentzian,
    fit_triple_lorentzian,
    linewidth_fit,
    lorentzian,
    raman_dispersion_curve,
    transmission_scan,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model
    "SystemConfig",
    "PulseShape",
    # linear algebra
    "HilbertSpace",
    "OperatorMatrix",
    "DensityMatrix",
    "tensor_product",
    "annihilation_operator",
    "expectation",
    # atomic structure
    "Sublevel",
    "LevelScheme",
    "MagneticEnvironment",
    "wigner_3j",
    "clebsch_gordan",
    "zeeman_shift",
    # dynamics
    "MasterEquationProblem",
    "TrajectoryResult",
    "evolve",
    "steady_state",
    "liouvillian",
    # spectroscopy
    "SpectrumScan",
    "DispersionCurve",
    "LorentzianFit",
    "TripleLorentzianFit",
    "lorentzian",
    "fit_lorentzian",
    "fit_triple_lorentzian",
    "emission_scan",
    "extract_raman_shift",
    "raman_dispersion_curve",
    "transmission_scan",
    "linewidth_fit",
    # analysis
    "DressedSpectrum",
    "dressed_states",
    "coupling_pair",
    "effective_coupling",
    "doppler_corrected_g0",
    "FitResult",
    "fit_g0",
    "ErrorBudget",
    "error_budget",
    "DriveEstimate",
    "drive_ratio_curve",
    "estimate_drive_amplitude",
    # errors
    "IonCavityError",
    "ConfigError",
    "DimensionMismatchError",
    "SpaceMismatchError",
    "SolverError",
    "DegenerateSteadyStateError",
    "FitConvergenceError",
    "ExtrapolationError",
]
