"""Everything downstream of raw spectra.

Dressed-state structure of the first excitation manifold, the effective
two-mode coupling, chi-square fitting of g0 against a measured dispersion
curve, parameter error propagation, the Doppler-spread coupling correction,
and drive-amplitude estimation from peak-transmission ratios.

All quantities here are plain MHz (or gauss, nm); nothing in this module
touches angular frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .atomic import clebsch_gordan
from .errors import ConfigError, ExtrapolationError, FitConvergenceError, SolverError
from .model import SystemConfig
from .spectroscopy import DispersionCurve, raman_dispersion_curve, transmission_scan

__all__ = [
    "DressedSpectrum",
    "dressed_states",
    "coupling_pair",
    "effective_coupling",
    "doppler_corrected_g0",
    "FitResult",
    "fit_g0",
    "BudgetRow",
    "ErrorBudget",
    "error_budget",
    "DriveEstimate",
    "drive_ratio_curve",
    "estimate_drive_amplitude",
]


# ---------------------------------------------------------------------------
# Dressed states of the first excitation manifold
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DressedSpectrum:
    """Eigensystem of the {|a,1,0>, |b,0,1>, |c,0,0>} block.

    Eigenvalues ascend (-lambda, 0, +lambda); eigenvector rows follow the
    same order, components over the basis above. The zero-eigenvalue state
    is dark: it has no amplitude on the excited atomic state |c,0,0>.
    """

    eigenvalues_mhz: tuple[float, float, float]
    eigenvectors: tuple[tuple[float, float, float], ...]
    lambda_mhz: float

    @property
    def dark_state(self) -> tuple[float, float, float]:
        return self.eigenvectors[1]

    def to_csv(self) -> str:
        lines = ["state,eigenvalue_mhz,amp_a,amp_b,amp_c"]
        for name, val, vec in zip(
            ("u_minus", "u_0", "u_plus"), self.eigenvalues_mhz, self.eigenvectors
        ):
            lines.append(f"{name},{val!r},{vec[0]!r},{vec[1]!r},{vec[2]!r}")
        return "\n".join(lines) + "\n"


def dressed_states(g1_mhz: float, g2_mhz: float) -> DressedSpectrum:
    """Closed-form eigensystem of [[0,0,g1],[0,0,g2],[g1,g2,0]]."""
    if g1_mhz == 0.0 and g2_mhz == 0.0:
        raise ValueError("dressed_states requires (g1, g2) != (0, 0)")
    lam = math.hypot(g1_mhz, g2_mhz)
    u_minus = (g1_mhz / (math.sqrt(2) * lam), g2_mhz / (math.sqrt(2) * lam),
               -1.0 / math.sqrt(2))
    u_dark = (g2_mhz / lam, -g1_mhz / lam, 0.0)
    u_plus = (g1_mhz / (math.sqrt(2) * lam), g2_mhz / (math.sqrt(2) * lam),
              1.0 / math.sqrt(2))
    return DressedSpectrum(
        eigenvalues_mhz=(-lam, 0.0, lam),
        eigenvectors=(u_minus, u_dark, u_plus),
        lambda_mhz=lam,
    )


def coupling_pair(g0_mhz: float) -> tuple[float, float]:
    """(g1, g2): g0 scaled by the sigma+ and sigma- transition amplitudes."""
    if g0_mhz < 0:
        raise ValueError("g0 must be nonnegative")
    c1 = abs(clebsch_gordan(1.5, -1.5, +1, 0.5, -0.5))
    c2 = abs(clebsch_gordan(1.5, +0.5, -1, 0.5, -0.5))
    return g0_mhz * c1, g0_mhz * c2


def effective_coupling(g0_mhz: float) -> float:
    """Collective coupling lambda = sqrt(g1^2 + g2^2) for the two-mode pair."""
    g1, g2 = coupling_pair(g0_mhz)
    return math.hypot(g1, g2)


def doppler_corrected_g0(
    g0_ideal_mhz: float, delta_z_nm: float, wavelength_nm: float
) -> float:
    """Coupling reduced by thermal position spread along the standing wave."""
    if g0_ideal_mhz < 0 or delta_z_nm < 0 or wavelength_nm <= 0:
        raise ValueError("inputs must be positive (delta_z may be zero)")
    k = 2.0 * math.pi / wavelength_nm
    return g0_ideal_mhz * math.sqrt((1.0 + math.exp(-(k * delta_z_nm) ** 2)) / 2.0)


# ---------------------------------------------------------------------------
# g0 fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    g0_mhz: float
    stderr_mhz: float
    chi2: float
    dof: int
    chi2_reduced: float
    n_evaluations: int
    weighted: bool
    flat_objective: bool
    at_lower_edge: bool
    at_upper_edge: bool
    samples: tuple[tuple[float, float], ...]  # (g0, chi2) pairs, ascending g0

    def to_csv(self) -> str:
        lines = ["parameter,value"]
        lines.append(f"g0_mhz,{self.g0_mhz!r}")
        lines.append(f"stderr_mhz,{self.stderr_mhz!r}")
        lines.append(f"chi2,{self.chi2!r}")
        lines.append(f"dof,{self.dof}")
        lines.append(f"chi2_reduced,{self.chi2_reduced!r}")
        lines.append(f"n_evaluations,{self.n_evaluations}")
        lines.append(f"weighted,{self.weighted}")
        lines.append(f"flat_objective,{self.flat_objective}")
        lines.append(f"at_lower_edge,{self.at_lower_edge}")
        lines.append(f"at_upper_edge,{self.at_upper_edge}")
        return "\n".join(lines) + "\n"


def _as_curve_points(
    measured_curve: DispersionCurve | Sequence[tuple[float, float, float]],
) -> list[tuple[float, float, float]]:
    if isinstance(measured_curve, DispersionCurve):
        return list(measured_curve.points)
    return [(float(p[0]), float(p[1]), float(p[2])) for p in measured_curve]


class _Objective:
    """Chi-square of the simulated dispersion curve against measured points.

    Forward-model evaluations are cached per (g0, delta_p); the optimizer
    revisits coarse-scan points during refinement at zero extra cost.
    """

    def __init__(
        self,
        cfg: SystemConfig,
        points: list[tuple[float, float, float]],
        threads: int,
    ):
        self.cfg = cfg
        self.delta_p = np.array([p[0] for p in points])
        self.measured = np.array([p[1] for p in points])
        errs = np.array([p[2] for p in points])
        self.weighted = bool(np.all(np.isfinite(errs)) and np.all(errs > 0))
        self.weights = 1.0 / errs**2 if self.weighted else np.ones_like(self.measured)
        self.threads = threads
        self.model_cache: dict[tuple[float, float], float] = {}
        self.chi2_cache: dict[float, float] = {}

    def __call__(self, g0: float) -> float:
        g0 = float(g0)
        if g0 in self.chi2_cache:
            return self.chi2_cache[g0]
        missing = [dp for dp in self.delta_p if (g0, float(dp)) not in self.model_cache]
        if missing:
            curve = raman_dispersion_curve(
                self.cfg.with_updates(g0_mhz=g0), missing, threads=self.threads
            )
            if curve.failures:
                detail = "; ".join(f"delta_p={dp}: {msg}" for dp, msg in curve.failures)
                raise SolverError(f"forward model failed at g0={g0} MHz: {detail}")
            for dp, delta, _ in curve.points:
                self.model_cache[(g0, float(dp))] = delta
        model = np.array([self.model_cache[(g0, float(dp))] for dp in self.delta_p])
        chi2 = float(np.sum(self.weights * (self.measured - model) ** 2))
        self.chi2_cache[g0] = chi2
        return chi2


def fit_g0(
    measured_curve: DispersionCurve | Sequence[tuple[float, float, float]],
    cfg: SystemConfig,
    *,
    threads: int = 1,
) -> FitResult:
    """One-parameter chi-square fit of g0 to a measured dispersion curve.

    Bracketed scalar minimization (golden section with parabolic refinement)
    over [fit_bracket_min_mhz, fit_bracket_max_mhz], seeded by a coarse scan
    of fit_coarse_points. Weights are 1/delta_error^2 when every point
    carries a positive finite error, unweighted otherwise.
    """
    points = _as_curve_points(measured_curve)
    if len(points) < 5:
        raise FitConvergenceError(
            f"need at least 5 dispersion points to fit g0, got {len(points)}"
        )
    cfg = cfg.validated()
    lo, hi = cfg.fit_bracket_min_mhz, cfg.fit_bracket_max_mhz
    objective = _Objective(cfg, points, threads)

    coarse = np.linspace(lo, hi, cfg.fit_coarse_points)
    coarse_chi2 = np.array([objective(g) for g in coarse])
    spread = float(coarse_chi2.max() - coarse_chi2.min())
    flat = spread <= 1e-12 * max(1.0, float(coarse_chi2.min()))

    if flat:
        best = float(coarse[int(np.argmin(coarse_chi2))])
        chi2_min = float(coarse_chi2.min())
        return _build_fit_result(objective, best, chi2_min, len(points),
                                 flat_objective=True, lo=lo, hi=hi,
                                 xatol=cfg.fit_xatol_mhz)

    i_best = int(np.argmin(coarse_chi2))
    b_lo = coarse[max(i_best - 1, 0)]
    b_hi = coarse[min(i_best + 1, len(coarse) - 1)]
    if b_lo == b_hi:  # single coarse point: widen to the full bracket
        b_lo, b_hi = lo, hi
    result = minimize_scalar(
        objective,
        bounds=(float(b_lo), float(b_hi)),
        method="bounded",
        options={"xatol": cfg.fit_xatol_mhz, "maxiter": 80},
    )
    if not result.success:
        raise FitConvergenceError(
            f"bounded minimization did not converge: {result.message}"
        )
    g0_hat = float(result.x)
    chi2_min = float(result.fun)
    return _build_fit_result(objective, g0_hat, chi2_min, len(points),
                             flat_objective=False, lo=lo, hi=hi,
                             xatol=cfg.fit_xatol_mhz)


def _build_fit_result(
    objective: _Objective,
    g0_hat: float,
    chi2_min: float,
    n_points: int,
    *,
    flat_objective: bool,
    lo: float,
    hi: float,
    xatol: float,
) -> FitResult:
    dof = max(n_points - 1, 1)
    stderr = float("nan")
    if not flat_objective:
        # Sample the curvature symmetrically (cache makes repeats free).
        h = max(4.0 * xatol, 0.02)
        for g in (g0_hat - h, g0_hat + h):
            if lo <= g <= hi:
                objective(g)
        near = [
            (g, c)
            for g, c in objective.chi2_cache.items()
            if abs(g - g0_hat) <= max(10.0 * xatol, 0.3)
        ]
        if len(near) >= 3:
            gs = np.array([g for g, _ in near])
            cs = np.array([c for _, c in near])
            quad = np.polyfit(gs - g0_hat, cs, 2)
            a = quad[0]
            if a > 0:
                stderr = 1.0 / math.sqrt(a)
                if not objective.weighted:
                    stderr *= math.sqrt(max(chi2_min, 0.0) / dof) or 1.0
    samples = tuple(sorted(objective.chi2_cache.items()))
    return FitResult(
        g0_mhz=g0_hat,
        stderr_mhz=stderr,
        chi2=chi2_min,
        dof=dof,
        chi2_reduced=chi2_min / dof,
        n_evaluations=len(objective.chi2_cache),
        weighted=objective.weighted,
        flat_objective=flat_objective,
        at_lower_edge=g0_hat <= lo + 2.0 * xatol,
        at_upper_edge=g0_hat >= hi - 2.0 * xatol,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Error budget
# ---------------------------------------------------------------------------

_BUDGET_LABELS = {
    "omega_397_mhz": ("Omega_397", "MHz", "dimensionless"),
    "b_field_gauss": ("B field", "G", "MHz/G"),
    "kappa_mhz": ("kappa", "MHz", "dimensionless"),
}


@dataclass(frozen=True)
class BudgetRow:
    name: str
    label: str
    parameter_error: float
    error_unit: str
    gradient: float
    gradient_unit: str
    contribution_mhz: float
    valid: bool
    detail: str = ""


@dataclass(frozen=True)
class ErrorBudget:
    fitted_g0_mhz: float
    rows: tuple[BudgetRow, ...]
    combined_mhz: float

    def to_csv(self) -> str:
        lines = ["parameter,error_of_parameter,gradient,error_budget_for_g0_mhz,valid,detail"]
        for r in self.rows:
            lines.append(
                f"{r.label},{r.parameter_error!r},{r.gradient!r},"
                f"{r.contribution_mhz!r},{r.valid},{r.detail}"
            )
        lines.append(f"combined,,,{self.combined_mhz!r},True,quadrature sum")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        header = ("Parameter", "Error of param.", "Gradient", "Error budget for g0")
        rows = []
        for r in self.rows:
            if r.valid:
                rows.append(
                    (
                        r.label,
                        f"{r.parameter_error:g} {r.error_unit}",
                        f"{r.gradient:.3f} {r.gradient_unit}",
                        f"{r.contribution_mhz:.3f} MHz",
                    )
                )
            else:
                rows.append((r.label, f"{r.parameter_error:g} {r.error_unit}",
                             "invalid", r.detail or "refit failed"))
        rows.append(("combined", "", "", f"{self.combined_mhz:.3f} MHz"))
        widths = [
            max(len(header[i]), max(len(row[i]) for row in rows)) for i in range(4)
        ]
        def fmt(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(header), fmt(tuple("-" * w for w in widths))]
        out.extend(fmt(r) for r in rows)
        return "\n".join(out) + "\n"

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _warm_cfg(cfg: SystemConfig, center_g0: float) -> SystemConfig:
    """Narrow the fit bracket around a known optimum for cheap refits."""
    lo = max(cfg.fit_bracket_min_mhz, center_g0 - 1.5)
    hi = min(cfg.fit_bracket_max_mhz, center_g0 + 1.5)
    if hi - lo < 4.0 * cfg.fit_xatol_mhz:
        lo, hi = cfg.fit_bracket_min_mhz, cfg.fit_bracket_max_mhz
    return cfg.with_updates(
        fit_bracket_min_mhz=lo, fit_bracket_max_mhz=hi, fit_coarse_points=3
    )


def error_budget(
    cfg: SystemConfig,
    fitted_g0_mhz: float,
    parameter_errors: Mapping[str, float] | None = None,
    *,
    measured_curve: DispersionCurve | Sequence[tuple[float, float, float]] | None = None,
    threads: int = 1,
) -> ErrorBudget:
    """Propagate model-parameter uncertainties into the fitted g0.

    For each parameter the measured curve is refit with the parameter moved
    by +/- its error; the symmetric difference of the two refit optima gives
    the gradient |dg0/dp| (the dependence is linear in this regime), and
    gradient x error gives the row's contribution. Rows whose refits fail
    are reported invalid and excluded from the quadrature combination.

    Without an explicit measured_curve the model curve at fitted_g0 is used,
    which reproduces the fit self-consistently before perturbation.
    """
    cfg = cfg.validated()
    if parameter_errors is None:
        parameter_errors = {
            "omega_397_mhz": cfg.budget_omega_397_err_mhz,
            "b_field_gauss": cfg.budget_b_field_err_gauss,
            "kappa_mhz": cfg.budget_kappa_err_mhz,
        }
    if measured_curve is None:
        base = raman_dispersion_curve(
            cfg.with_updates(g0_mhz=fitted_g0_mhz), threads=threads
        )
        if base.failures:
            raise SolverError(
                "error_budget: baseline dispersion curve failed at "
                + ", ".join(f"delta_p={dp}" for dp, _ in base.failures)
            )
        points = list(base.points)
    else:
        points = _as_curve_points(measured_curve)

    rows: list[BudgetRow] = []
    for name, err in parameter_errors.items():
        label, err_unit, grad_unit = _BUDGET_LABELS.get(name, (name, "", "MHz/unit"))
        if err < 0:
            raise ConfigError([f"error_budget: negative error for {name}"])
        base_value = getattr(cfg, name)
        try:
            fits = []
            for sign in (+1.0, -1.0):
                pert = cfg.with_updates(**{name: base_value + sign * err})
                fit = fit_g0(points, _warm_cfg(pert, fitted_g0_mhz), threads=threads)
                fits.append(fit.g0_mhz)
            gradient = abs(fits[0] - fits[1]) / (2.0 * err) if err > 0 else 0.0
            rows.append(
                BudgetRow(
                    name=name,
                    label=label,
                    parameter_error=err,
                    error_unit=err_unit,
                    gradient=gradient,
                    gradient_unit=grad_unit,
                    contribution_mhz=gradient * err,
                    valid=True,
                )
            )
        except (FitConvergenceError, SolverError) as exc:
            rows.append(
                BudgetRow(
                    name=name,
                    label=label,
                    parameter_error=err,
                    error_unit=err_unit,
                    gradient=float("nan"),
                    gradient_unit=grad_unit,
                    contribution_mhz=float("nan"),
                    valid=False,
                    detail=str(exc),
                )
            )
    combined = math.sqrt(
        sum(r.contribution_mhz**2 for r in rows if r.valid)
    )
    return ErrorBudget(
        fitted_g0_mhz=fitted_g0_mhz, rows=tuple(rows), combined_mhz=combined
    )


# ---------------------------------------------------------------------------
# Drive-amplitude estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriveEstimate:
    drive_mhz: float
    ratio: float
    grid_drives_mhz: tuple[float, ...]
    grid_ratios: tuple[float, ...]

    def curve_csv(self) -> str:
        lines = ["drive_mhz,peak_ratio"]
        for e, r in zip(self.grid_drives_mhz, self.grid_ratios):
            lines.append(f"{e!r},{r!r}")
        return "\n".join(lines) + "\n"


def drive_ratio_curve(
    cfg: SystemConfig, *, threads: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Peak transmission with the ion over peak without, per drive amplitude.

    Uses a log-spaced drive grid from the config; peaks are maxima of the
    default transmission grid for each case.
    """
    cfg = cfg.validated()
    drives = np.geomspace(cfg.drive_grid_min, cfg.drive_grid_max,
                          cfg.drive_grid_points)
    ratios = []
    for e in drives:
        with_ion = transmission_scan(
            cfg.with_updates(drive_amplitude_mhz=float(e)), threads=threads
        )
        without = transmission_scan(
            cfg.with_updates(drive_amplitude_mhz=float(e), no_ion=True),
            threads=threads,
        )
        peak_with = max(with_ion.signals)
        peak_without = max(without.signals)
        if peak_without <= 0:
            raise SolverError(f"empty-cavity peak vanished at drive {e} MHz")
        ratios.append(peak_with / peak_without)
    return drives, np.array(ratios)


def estimate_drive_amplitude(
    peak_ratio: float, cfg: SystemConfig, *, threads: int = 1
) -> DriveEstimate:
    """Invert the computed ratio-vs-drive curve at a measured peak ratio.

    Monotone piecewise-cubic interpolation over the computed curve; ratios
    outside the curve's range are refused rather than extrapolated.
    """
    if not 0.0 < peak_ratio <= 1.0:
        raise ConfigError(
            [f"peak_ratio: {peak_ratio} outside (0, 1]"]
        )
    drives, ratios = drive_ratio_curve(cfg, threads=threads)
    if np.any(np.diff(ratios) <= 0):
        raise FitConvergenceError(
            "computed ratio-vs-drive curve is not strictly monotone; "
            "widen the drive grid or refine the scan"
        )
    if peak_ratio < ratios[0] or peak_ratio > ratios[-1]:
        raise ExtrapolationError(
            f"measured ratio {peak_ratio:.4f} outside computed range "
            f"[{ratios[0]:.4f}, {ratios[-1]:.4f}]; adjust drive_grid_min/max"
        )
    inverse = PchipInterpolator(ratios, drives)
    e_mhz = float(inverse(peak_ratio))
    return DriveEstimate(
        drive_mhz=e_mhz,
        ratio=peak_ratio,
        grid_drives_mhz=tuple(float(x) for x in drives),
        grid_ratios=tuple(float(r) for r in ratios),
    )
