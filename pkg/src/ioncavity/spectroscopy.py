"""Measurement pipelines: emission scans, transmission scans, line fitting.

All detunings and widths at this layer are plain MHz; the conversion to
angular frequencies happens inside the operator builders. Emission signals
are dimensionless expected photon numbers per pulse (2*kappa integrated over
the window); transmission signals are steady-state photon flux 2*kappa<n>
in photons/us.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .atomic import TWO_PI
from .dynamics import (
    MasterEquationProblem,
    _steady_state_from_generator,
    dissipator_superoperator,
    evolve_batch,
    hamiltonian_superoperator,
)
from .errors import (
    ConfigError,
    DegenerateSteadyStateError,
    FitConvergenceError,
    SolverError,
)
from .linalg import DensityMatrix, expectation
from .model import (
    SystemConfig,
    build_collapse_operators,
    build_H0_raman,
    build_H0_transmission,
    build_H_drive,
    build_H_ioncav,
    build_HB,
    build_pump_coupling,
    build_reset_operators,
    composite_space,
    mode_number_operators,
)

__all__ = [
    "SpectrumScan",
    "LorentzianFit",
    "TripleLorentzianFit",
    "fit_lorentzian",
    "fit_triple_lorentzian",
    "emission_scan",
    "extract_raman_shift",
    "DispersionCurve",
    "raman_dispersion_curve",
    "transmission_scan",
    "linewidth_fit",
    "default_emission_grid",
    "default_transmission_grid",
    "default_dispersion_grid",
]

_SIGNAL_CLAMP = 1e-9  # negatives larger than this are real errors, not round-off


# ---------------------------------------------------------------------------
# Scan container + CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumScan:
    """Ordered (detuning, signal, error) triples plus provenance metadata."""

    axis_label: str
    detunings: tuple[float, ...]
    signals: tuple[float, ...]
    signal_errors: tuple[float, ...] | None
    protocol: str
    params_hash: str
    config: SystemConfig | None = None

    def __post_init__(self) -> None:
        d = np.asarray(self.detunings)
        if len(d) == 0:
            raise ValueError("scan must contain at least one point")
        if len(d) > 1 and not (np.all(np.diff(d) > 0) or np.all(np.diff(d) < 0)):
            raise ValueError("scan detunings must be strictly monotone")
        cleaned = []
        for s in self.signals:
            if s < -_SIGNAL_CLAMP:
                raise ValueError(f"scan signal {s} is negative beyond round-off")
            cleaned.append(max(s, 0.0))
        object.__setattr__(self, "signals", tuple(cleaned))
        if self.signal_errors is not None and len(self.signal_errors) != len(d):
            raise ValueError("signal_errors length mismatch")
        if len(self.signals) != len(d):
            raise ValueError("signals length mismatch")

    @property
    def points(self) -> list[tuple[float, float, float | None]]:
        errs = self.signal_errors or (None,) * len(self.detunings)
        return list(zip(self.detunings, self.signals, errs))

    def to_csv(self) -> str:
        lines = [f"# protocol={self.protocol}, params hash={self.params_hash}"]
        lines.append("detuning_mhz,signal,signal_error")
        errs = self.signal_errors or (None,) * len(self.detunings)
        for x, y, e in zip(self.detunings, self.signals, errs):
            lines.append(f"{x!r},{y!r},{'' if e is None else repr(e)}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, axis_label: str = "detuning_mhz") -> "SpectrumScan":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 3:
            raise ValueError("scan CSV needs a header comment, column row, and data")
        protocol, params_hash = _parse_scan_header(lines[0])
        xs: list[float] = []
        ys: list[float] = []
        es: list[float] = []
        have_errors = False
        for ln in lines[2:]:
            cells = ln.split(",")
            if len(cells) != 3:
                raise ValueError(f"malformed scan row: {ln!r}")
            xs.append(float(cells[0]))
            ys.append(float(cells[1]))
            if cells[2].strip():
                es.append(float(cells[2]))
                have_errors = True
            else:
                es.append(float("nan"))
        errors = tuple(es) if have_errors else None
        return cls(axis_label, tuple(xs), tuple(ys), errors, protocol, params_hash)

    @classmethod
    def load(cls, path: str | Path) -> "SpectrumScan":
        return cls.from_csv(Path(path).read_text())


def _parse_scan_header(line: str) -> tuple[str, str]:
    if not line.startswith("#"):
        raise ValueError("scan CSV must start with a '# protocol=...' header")
    fields = dict(
        part.strip().split("=", 1) for part in line.lstrip("#").split(",") if "=" in part
    )
    return fields.get("protocol", "unknown"), fields.get("params hash", "")


# ---------------------------------------------------------------------------
# Lorentzian fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LorentzianFit:
    center_mhz: float
    hwhm_mhz: float
    amplitude: float
    offset: float
    center_err: float
    hwhm_err: float
    amplitude_err: float
    offset_err: float
    residual_norm: float

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return lorentzian(np.asarray(x), self.center_mhz, self.hwhm_mhz,
                          self.amplitude, self.offset)


def lorentzian(x, center, hwhm, amplitude, offset):
    return offset + amplitude * hwhm**2 / ((x - center) ** 2 + hwhm**2)


def _local_maxima(y: np.ndarray) -> list[int]:
    idx = [i for i in range(1, len(y) - 1) if y[i] >= y[i - 1] and y[i] >= y[i + 1]]
    idx.sort(key=lambda i: -y[i])
    if not idx:
        idx = [int(np.argmax(y))]
    return idx


def _width_guess(x: np.ndarray, y: np.ndarray, peak: int) -> float:
    base = float(np.min(y))
    half = base + 0.5 * (y[peak] - base)
    left = peak
    while left > 0 and y[left] > half:
        left -= 1
    right = peak
    while right < len(y) - 1 and y[right] > half:
        right += 1
    width = 0.5 * abs(x[right] - x[left])
    span = abs(x[-1] - x[0])
    return float(np.clip(width, span / max(len(x), 2), span))


def fit_lorentzian(
    x: Sequence[float],
    y: Sequence[float],
    y_err: Sequence[float] | None = None,
) -> LorentzianFit:
    """Damped least-squares fit, multi-started from the 3 tallest local maxima."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 5:
        raise FitConvergenceError("need at least 5 points for a Lorentzian fit")
    w = None
    if y_err is not None:
        w = np.asarray(y_err, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            w = None

    def residuals(p):
        r = lorentzian(x, *p) - y
        return r / w if w is not None else r

    best = None
    for peak in _local_maxima(y)[:3]:
        hw = _width_guess(x, y, peak)
        p0 = [float(x[peak]), hw, float(y[peak] - np.min(y)), float(np.min(y))]
        try:
            sol = least_squares(residuals, p0, method="lm", max_nfev=2000)
        except Exception:
            continue
        if not np.all(np.isfinite(sol.x)):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise FitConvergenceError("Lorentzian fit failed from every start point")

    p = best.x
    p[1] = abs(p[1])
    errs = _parameter_errors(best, len(x))
    return LorentzianFit(
        center_mhz=float(p[0]),
        hwhm_mhz=float(p[1]),
        amplitude=float(p[2]),
        offset=float(p[3]),
        center_err=errs[0],
        hwhm_err=errs[1],
        amplitude_err=errs[2],
        offset_err=errs[3],
        residual_norm=float(np.linalg.norm(best.fun)),
    )


def _parameter_errors(sol, n_points: int) -> tuple[float, ...]:
    """Standard errors from the Jacobian, scaled by reduced residuals."""
    n_par = len(sol.x)
    dof = max(n_points - n_par, 1)
    s_sq = 2.0 * sol.cost / dof
    jtj = sol.jac.T @ sol.jac
    try:
        cov = np.linalg.inv(jtj) * s_sq
        errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        errs = np.full(n_par, float("nan"))
    return tuple(float(e) for e in errs)


@dataclass(frozen=True)
class TripleLorentzianFit:
    centers_mhz: tuple[float, float, float]   # ascending
    hwhms_mhz: tuple[float, float, float]
    amplitudes: tuple[float, float, float]
    offset: float
    center_errs: tuple[float, float, float]
    hwhm_errs: tuple[float, float, float]
    residual_norm: float


def _triple_model(x, p):
    c1, w1, a1, c2, w2, a2, c3, w3, a3, off = p
    return (
        off
        + a1 * w1**2 / ((x - c1) ** 2 + w1**2)
        + a2 * w2**2 / ((x - c2) ** 2 + w2**2)
        + a3 * w3**2 / ((x - c3) ** 2 + w3**2)
    )


def fit_triple_lorentzian(
    x: Sequence[float], y: Sequence[float]
) -> TripleLorentzianFit:
    """Shared-offset sum of three Lorentzians; starts from thirds of the axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 12:
        raise FitConvergenceError("need at least 12 points for a triple-Lorentzian fit")

    thirds = np.array_split(np.arange(len(x)), 3)
    p0 = []
    base = float(np.min(y))
    for part in thirds:
        peak = part[int(np.argmax(y[part]))]
        p0.extend([float(x[peak]), _width_guess(x, y, int(peak)),
                   float(y[peak] - base)])
    p0.append(base)

    def residuals(p):
        return _triple_model(x, p) - y

    sol = least_squares(residuals, p0, method="lm", max_nfev=5000)
    if not np.all(np.isfinite(sol.x)):
        raise FitConvergenceError("triple-Lorentzian fit diverged")
    errs = _parameter_errors(sol, len(x))

    groups = sorted(
        [(sol.x[3 * i], abs(sol.x[3 * i + 1]), sol.x[3 * i + 2],
          errs[3 * i], errs[3 * i + 1]) for i in range(3)],
        key=lambda g: g[0],
    )
    centers = tuple(float(g[0]) for g in groups)
    if centers[1] - centers[0] < 1e-9 or centers[2] - centers[1] < 1e-9:
        raise FitConvergenceError("fewer than 3 resolvable peaks in the scan")
    return TripleLorentzianFit(
        centers_mhz=centers,
        hwhms_mhz=tuple(float(g[1]) for g in groups),
        amplitudes=tuple(float(g[2]) for g in groups),
        offset=float(sol.x[9]),
        center_errs=tuple(float(g[3]) for g in groups),
        hwhm_errs=tuple(float(g[4]) for g in groups),
        residual_norm=float(np.linalg.norm(sol.fun)),
    )


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

def default_emission_grid(cfg: SystemConfig, delta_p_mhz: float) -> np.ndarray:
    center = (
        delta_p_mhz if cfg.scan_center_mhz == "auto" else float(cfg.scan_center_mhz)
    )
    return np.linspace(
        center - cfg.scan_span_mhz, center + cfg.scan_span_mhz, cfg.scan_points
    )


def default_transmission_grid(cfg: SystemConfig) -> np.ndarray:
    center = 0.0 if cfg.scan_center_mhz == "auto" else float(cfg.scan_center_mhz)
    return np.linspace(
        center - cfg.scan_span_mhz, center + cfg.scan_span_mhz, cfg.scan_points
    )


def default_dispersion_grid(cfg: SystemConfig) -> np.ndarray:
    step = cfg.dispersion_delta_p_step_mhz
    return np.arange(
        cfg.dispersion_delta_p_min_mhz,
        cfg.dispersion_delta_p_max_mhz + 0.5 * step,
        step,
    )


# ---------------------------------------------------------------------------
# Emission scan
# ---------------------------------------------------------------------------

def _emission_initial_state(cfg: SystemConfig) -> DensityMatrix:
    scheme = cfg.scheme()
    space = composite_space(cfg)
    if "S" not in scheme.manifolds:
        raise ConfigError(
            ["emission protocols need the S manifold; use level_scheme=eight_level"]
        )
    vac = {"sigma_plus": 0, "sigma_minus": 0}
    lo = space.index({"atom": scheme.index("S", -0.5), **vac})
    hi = space.index({"atom": scheme.index("S", +0.5), **vac})
    if cfg.emission_initial == "lower":
        return DensityMatrix.pure(space, lo)
    if cfg.emission_initial == "upper":
        return DensityMatrix.pure(space, hi)
    return DensityMatrix.mixture(space, [(lo, 0.5), (hi, 0.5)])


def _emission_problems(
    cfg: SystemConfig, delta_p_mhz: float, delta_c_grid: np.ndarray
) -> list[MasterEquationProblem]:
    base = cfg.with_updates(delta_p_mhz=delta_p_mhz)
    collapse = tuple(build_collapse_operators(base))
    pump = build_pump_coupling(base)
    pulse = base.pulse()
    h_fixed = build_HB(base) + build_H_ioncav(base)
    rho0 = _emission_initial_state(base)
    problems = []
    for dc in delta_c_grid:
        point = replace(base, delta_c_mhz=float(dc))
        problems.append(
            MasterEquationProblem(
                static_h=build_H0_raman(point) + h_fixed,
                collapse_ops=collapse,
                initial_state=rho0,
                drive_h=pump,
                envelope=pulse,
            )
        )
    return problems


def emission_window_us(cfg: SystemConfig) -> float:
    """Pump pulse plus ring-down of ringdown_factor/(2 kappa)."""
    kappa_ang = TWO_PI * cfg.kappa_mhz
    return cfg.pulse_duration_us + cfg.ringdown_factor / (2.0 * kappa_ang)


_BATCH_CHUNK = 16  # fixed so results never depend on the worker count


def _run_emission_batch(
    cfg: SystemConfig,
    problems: list[MasterEquationProblem],
    threads: int,
) -> list[dict[str, float]]:
    kappa_ang = TWO_PI * cfg.kappa_mhz
    n_plus, n_minus = mode_number_operators(cfg)
    integrate = {
        "sigma_plus": 2.0 * kappa_ang * n_plus,
        "sigma_minus": 2.0 * kappa_ang * n_minus,
    }
    window = emission_window_us(cfg)
    chunks = [
        problems[i : i + _BATCH_CHUNK] for i in range(0, len(problems), _BATCH_CHUNK)
    ]
    if threads <= 1 or len(chunks) < 2:
        out: list[dict[str, float]] = []
        for chunk in chunks:
            out.extend(evolve_batch(chunk, window, integrate=integrate))
        return out
    with ThreadPoolExecutor(max_workers=min(threads, len(chunks))) as pool:
        futures = [
            pool.submit(evolve_batch, chunk, window, integrate=integrate)
            for chunk in chunks
        ]
        out = []
        for f in futures:
            out.extend(f.result())
    return out


def emission_scan(
    cfg: SystemConfig,
    delta_p_mhz: float | None = None,
    delta_c_grid: Sequence[float] | None = None,
    *,
    threads: int = 1,
) -> SpectrumScan:
    """Integrated two-mode emission 2k int <n+ + n-> dt versus Delta_c.

    One pump pulse plus ring-down is simulated per grid point, starting from
    the configured S-manifold state with both modes in vacuum.
    """
    cfg = cfg.validated()
    if delta_p_mhz is None:
        delta_p_mhz = cfg.delta_p_mhz
    grid = (
        default_emission_grid(cfg, delta_p_mhz)
        if delta_c_grid is None
        else np.asarray(delta_c_grid, dtype=float)
    )
    if len(grid) == 0:
        raise ValueError("emission_scan: empty detuning grid")
    effective = cfg.with_updates(delta_p_mhz=delta_p_mhz)
    problems = _emission_problems(cfg, delta_p_mhz, grid)
    try:
        results = _run_emission_batch(effective, problems, threads)
    except SolverError:
        results = _emission_rescue(effective, problems, grid)
    signals = tuple(r["sigma_plus"] + r["sigma_minus"] for r in results)
    return SpectrumScan(
        axis_label="delta_c_mhz",
        detunings=tuple(float(d) for d in grid),
        signals=signals,
        signal_errors=None,
        protocol="emission-scan",
        params_hash=effective.content_hash(),
        config=effective,
    )


def _emission_rescue(
    cfg: SystemConfig,
    problems: list[MasterEquationProblem],
    grid: np.ndarray,
) -> list[dict[str, float]]:
    """Rerun points one at a time so the failing detuning can be named."""
    out = []
    for dc, prob in zip(grid, problems):
        try:
            out.extend(_run_emission_batch(cfg, [prob], threads=1))
        except SolverError as exc:
            raise SolverError(
                f"emission scan failed at delta_c = {dc} MHz: {exc}",
                last_good_time=exc.last_good_time,
            ) from exc
    return out


# ---------------------------------------------------------------------------
# Raman shift extraction and dispersion curve
# ---------------------------------------------------------------------------

def extract_raman_shift(
    scan: SpectrumScan, delta_p_mhz: float
) -> tuple[float, float]:
    """Lorentzian-fit peak center minus Delta_p.

    Sign convention: a peak to the left of Delta_p on the Delta_c axis gives
    delta < 0. Warns when the fitted peak sits within one grid step of either
    scan edge.
    """
    fit = fit_lorentzian(scan.detunings, scan.signals, scan.signal_errors)
    x = np.asarray(scan.detunings)
    step = float(np.median(np.abs(np.diff(x)))) if len(x) > 1 else 0.0
    if fit.center_mhz < x.min() + step or fit.center_mhz > x.max() - step:
        warnings.warn(
            f"fitted peak at {fit.center_mhz:.3f} MHz sits at the scan edge",
            stacklevel=2,
        )
    return fit.center_mhz - delta_p_mhz, fit.center_err


@dataclass(frozen=True)
class DispersionCurve:
    """Raman shift delta vs pump detuning, with per-point failures kept."""

    points: tuple[tuple[float, float, float], ...]  # (delta_p, delta, delta_err)
    failures: tuple[tuple[float, str], ...]
    protocol: str
    params_hash: str

    def delta_p(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    def delta(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def delta_err(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def to_csv(self) -> str:
        lines = [f"# protocol={self.protocol}, params hash={self.params_hash}"]
        lines.append("delta_p_mhz,delta_mhz,delta_error_mhz")
        for dp, d, e in self.points:
            lines.append(f"{dp!r},{d!r},{e!r}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "DispersionCurve":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2:
            raise ValueError("dispersion CSV needs header and column rows")
        protocol, params_hash = _parse_scan_header(lines[0])
        pts = []
        for ln in lines[2:]:
            cells = ln.split(",")
            if len(cells) != 3:
                raise ValueError(f"malformed dispersion row: {ln!r}")
            pts.append((float(cells[0]), float(cells[1]), float(cells[2])))
        return cls(tuple(pts), (), protocol, params_hash)

    @classmethod
    def load(cls, path: str | Path) -> "DispersionCurve":
        return cls.from_csv(Path(path).read_text())


def raman_dispersion_curve(
    cfg: SystemConfig,
    delta_p_grid: Sequence[float] | None = None,
    *,
    threads: int = 1,
) -> DispersionCurve:
    """Emission scan + peak fit per pump detuning; survivors form the curve.

    All scans share one batched propagation when possible; on solver failure
    the affected pump detunings are recorded and the rest are kept.
    """
    cfg = cfg.validated()
    grid = (
        default_dispersion_grid(cfg)
        if delta_p_grid is None
        else np.asarray(delta_p_grid, dtype=float)
    )
    if len(grid) == 0:
        raise ValueError("raman_dispersion_curve: empty pump-detuning grid")

    points: list[tuple[float, float, float]] = []
    failures: list[tuple[float, str]] = []

    all_problems: list[MasterEquationProblem] = []
    scan_grids: list[np.ndarray] = []
    for dp in grid:
        g = default_emission_grid(cfg, float(dp))
        scan_grids.append(g)
        all_problems.extend(_emission_problems(cfg, float(dp), g))

    batched: list[dict[str, float]] | None
    try:
        batched = _run_emission_batch(cfg, all_problems, threads)
    except SolverError:
        batched = None

    offset = 0
    for dp, g in zip(grid, scan_grids):
        try:
            if batched is not None:
                results = batched[offset : offset + len(g)]
                signals = tuple(
                    r["sigma_plus"] + r["sigma_minus"] for r in results
                )
                scan = SpectrumScan(
                    axis_label="delta_c_mhz",
                    detunings=tuple(float(x) for x in g),
                    signals=signals,
                    signal_errors=None,
                    protocol="emission-scan",
                    params_hash=cfg.content_hash(),
                )
            else:
                scan = emission_scan(cfg, float(dp), g, threads=threads)
            delta, err = extract_raman_shift(scan, float(dp))
            points.append((float(dp), delta, err))
        except (SolverError, FitConvergenceError) as exc:
            failures.append((float(dp), str(exc)))
        offset += len(g)

    return DispersionCurve(
        points=tuple(points),
        failures=tuple(failures),
        protocol="raman-dispersion",
        params_hash=cfg.content_hash(),
    )


# ---------------------------------------------------------------------------
# Transmission scan
# ---------------------------------------------------------------------------

def transmission_scan(
    cfg: SystemConfig,
    delta_866_grid: Sequence[float] | None = None,
    *,
    threads: int = 1,
) -> SpectrumScan:
    """Steady-state probe transmission 2k<n+> versus probe detuning.

    The ion starts optically pumped (reset channel re-prepares it at a rate
    slow compared to every other timescale, standing in for the experimental
    probe duty cycle); signal is the driven-mode output flux in photons/us.
    """
    cfg = cfg.validated()
    grid = (
        default_transmission_grid(cfg)
        if delta_866_grid is None
        else np.asarray(delta_866_grid, dtype=float)
    )
    if len(grid) == 0:
        raise ValueError("transmission_scan: empty detuning grid")

    kappa_ang = TWO_PI * cfg.kappa_mhz
    n_plus, n_minus = mode_number_operators(cfg)

    # Detuning moves only the Hamiltonian; the dissipator is shared by every
    # scan point, so its superoperator is assembled once.
    collapse = build_collapse_operators(cfg)
    extra = [] if cfg.no_ion else build_reset_operators(cfg)
    dissipator = dissipator_superoperator(collapse + list(extra))
    h_fixed = build_H_drive(cfg)
    if not cfg.no_ion:
        h_fixed = h_fixed + build_HB(cfg) + build_H_ioncav(cfg)
    space = composite_space(cfg)

    def one_point(delta: float) -> float:
        point = replace(cfg, delta_866_mhz=float(delta))
        h = build_H0_transmission(point) + h_fixed
        gen = (hamiltonian_superoperator(h) + dissipator).tocsr()
        context = f"transmission scan point delta_866 = {delta} MHz"
        try:
            rho = _steady_state_from_generator(space, gen)
        except DegenerateSteadyStateError as exc:
            raise DegenerateSteadyStateError(exc.dimension, context) from exc
        except SolverError as exc:
            raise SolverError(
                f"{context}: {exc}", last_good_time=exc.last_good_time
            ) from exc
        signal = 2.0 * kappa_ang * expectation(rho, n_plus).real
        if cfg.transmission_signal == "total":
            signal += 2.0 * kappa_ang * expectation(rho, n_minus).real
        return signal

    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(grid))) as pool:
            signals = tuple(pool.map(one_point, [float(d) for d in grid]))
    else:
        signals = tuple(one_point(float(d)) for d in grid)

    return SpectrumScan(
        axis_label="delta_866_mhz",
        detunings=tuple(float(d) for d in grid),
        signals=signals,
        signal_errors=None,
        protocol="transmission-scan",
        params_hash=cfg.content_hash(),
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Cavity-linewidth fit with sideband self-calibration
# ---------------------------------------------------------------------------

def linewidth_fit(
    scan: SpectrumScan, sideband_offset_mhz: float
) -> tuple[float, float]:
    """HWHM of the central line, self-calibrated against known sidebands.

    The scan must show a carrier plus two modulation sidebands; the fitted
    sideband separation is forced to 2*sideband_offset by a linear stretch
    of the frequency axis, which removes any scan-axis calibration error.
    Returns (kappa_mhz, error_mhz).
    """
    if sideband_offset_mhz <= 0:
        raise ValueError("sideband_offset_mhz must be positive")
    fit = fit_triple_lorentzian(scan.detunings, scan.signals)
    c_lo, c_mid, c_hi = fit.centers_mhz
    stretch = 2.0 * sideband_offset_mhz / (c_hi - c_lo)
    kappa = fit.hwhms_mhz[1] * stretch
    rel_sq = 0.0
    if fit.hwhms_mhz[1] > 0 and np.isfinite(fit.hwhm_errs[1]):
        rel_sq += (fit.hwhm_errs[1] / fit.hwhms_mhz[1]) ** 2
    sep_err = np.hypot(fit.center_errs[0], fit.center_errs[2])
    if np.isfinite(sep_err):
        rel_sq += (sep_err / (c_hi - c_lo)) ** 2
    return float(kappa), float(kappa * np.sqrt(rel_sq))
