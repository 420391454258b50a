"""System configuration and operator builders.

Unit conventions: every rate, coupling and detuning is quoted in ordinary
frequency (MHz) at the configuration boundary and converted to angular
frequency (rad/us, i.e. the MHz number times 2*pi) inside the operators.
Times are in microseconds, magnetic field in gauss.

Composite Hilbert space order is (atom, sigma_plus mode, sigma_minus mode);
the atomic basis runs S, P, D manifolds with m_j ascending inside each.

Hamiltonian blocks (angular units):

    H0_raman  = delta_p * sum_m |S,m><S,m| + delta_c * sum_m |D,m><D,m|
    H_B       = B * sum_{L,m} g_L mu_B m |L,m><L,m|
    H_pump(t) = (omega_397/2) f(t) sum_q sum_{mS,mP}
                    [eps_q C(jS mS,1 q; jP mP) |P,mP><S,mS| + h.c.]
    H_ioncav  = g0 sum_{mD,mP} [ C(jD mD,1 +1; jP mP) a_+ |P,mP><D,mD|
                               + C(jD mD,1 -1; jP mP) a_- |P,mP><D,mD| + h.c.]
    H0_trans  = delta_866 * sum_m |D,m><D,m| - delta_866 * (n_+ + n_-)
    H_drive   = E (a_+ + a_+')

Collapse operators carry the square-rooted rate and feed the dissipator
L(rho, O) = 2 O rho O' - O'O rho - rho O'O, so a photon number decays as
exp(-2 kappa t) and kappa is the half width of the empty-cavity line.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from .atomic import TWO_PI, LevelScheme, MagneticEnvironment, clebsch_gordan, zeeman_shift
from .errors import ConfigError
from .linalg import HilbertSpace, OperatorMatrix, annihilation_operator, tensor_product

__all__ = [
    "PulseShape",
    "SystemConfig",
    "composite_space",
    "build_H0_raman",
    "build_HB",
    "build_H_pump",
    "build_pump_coupling",
    "build_H_ioncav",
    "build_H0_transmission",
    "build_H_drive",
    "build_collapse_operators",
    "build_reset_operators",
    "excitation_number_operator",
    "mode_number_operators",
    "CONFIG_SCHEMA",
]


# ---------------------------------------------------------------------------
# Pulse envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PulseShape:
    """Pump envelope f(t) with values in [0, 1]."""

    kind: str = "rectangular"
    duration_us: float = 0.3
    ramp_us: float = 0.05

    def envelope(self, t: float) -> float:
        if t < 0.0 or t > self.duration_us:
            return 0.0
        if self.kind == "rectangular":
            return 1.0
        # sin^2 turn-on/turn-off ramps, flat top in between
        r = self.ramp_us
        if r <= 0.0:
            return 1.0
        if t < r:
            return math.sin(0.5 * math.pi * t / r) ** 2
        if t > self.duration_us - r:
            return math.sin(0.5 * math.pi * (self.duration_us - t) / r) ** 2
        return 1.0

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Times where the envelope is non-smooth; integration restarts there."""
        if self.kind == "rectangular" or self.ramp_us <= 0.0:
            return (0.0, self.duration_us)
        return (0.0, self.ramp_us, self.duration_us - self.ramp_us, self.duration_us)

    @property
    def piecewise_constant(self) -> bool:
        return self.kind == "rectangular"


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Field:
    py_type: str  # float | int | bool | str | complex
    default: Any
    help: str


# Declaration order fixes the canonical serialization order.
CONFIG_SCHEMA: dict[str, _Field] = {
    # physics
    "level_scheme": _Field("str", "eight_level",
                           "atomic basis: eight_level | three_level | two_level"),
    "no_ion": _Field("bool", False, "drop the atom entirely (bare-cavity runs)"),
    "g0_mhz": _Field("float", 15.1, "ion-cavity coupling g0 (MHz)"),
    "kappa_mhz": _Field("float", 4.1, "cavity field decay kappa, HWHM of the empty-cavity line (MHz)"),
    "gamma_s_mhz": _Field("float", 10.764, "P -> S partial field decay (MHz)"),
    "gamma_d_mhz": _Field("float", 0.736, "P -> D partial field decay (MHz)"),
    "omega_397_mhz": _Field("float", 11.9, "pump Rabi frequency Omega_397 (MHz)"),
    "delta_p_mhz": _Field("float", -10.0, "pump detuning Delta_p (MHz)"),
    "delta_c_mhz": _Field("float", 0.0, "cavity detuning Delta_c in the emission problem (MHz)"),
    "delta_866_mhz": _Field("float", 0.0, "probe detuning Delta_866 in the transmission problem (MHz)"),
    "drive_amplitude_mhz": _Field("float", 0.032, "cavity drive amplitude E (MHz)"),
    "b_field_gauss": _Field("float", 0.9, "magnetic field along the cavity axis (gauss)"),
    "mu_b_mhz_per_gauss": _Field("float", 1.3996, "Bohr magneton (MHz/gauss); implementer-supplied constant"),
    "lande_g_s": _Field("float", 2.002, "Lande factor of S_1/2; implementer-supplied constant"),
    "lande_g_p": _Field("float", 2.0 / 3.0, "Lande factor of P_1/2; implementer-supplied constant"),
    "lande_g_d": _Field("float", 0.8, "Lande factor of D_3/2; implementer-supplied constant"),
    "pump_pol_m1": _Field("complex", 0j, "pump polarization component eps_{-1}"),
    "pump_pol_0": _Field("complex", 1.0 + 0j, "pump polarization component eps_0 (default: pi-polarized pump)"),
    "pump_pol_p1": _Field("complex", 0j, "pump polarization component eps_{+1}"),
    "fock_cutoff": _Field("int", 1, "photon number cutoff n_max per mode"),
    "pulse_shape": _Field("str", "rectangular", "pump envelope: rectangular | sin2_ramp"),
    "pulse_duration_us": _Field("float", 0.3, "pump pulse duration (us)"),
    "pulse_ramp_us": _Field("float", 0.05, "sin2_ramp turn-on/off time (us)"),
    "ringdown_factor": _Field("float", 5.0, "emission window extends by factor/(2 kappa) past the pulse"),
    "reset_rate_mhz": _Field("float", 0.05, "re-preparation rate modeling the probe duty cycle (MHz); 0 disables"),
    "prepared_sublevel": _Field("str", "D:-1.5", "optically pumped start state, 'manifold:m'"),
    "emission_initial": _Field("str", "mixture", "emission start state: mixture | lower | upper (S_1/2 sublevels)"),
    "transmission_signal": _Field("str", "plus", "transmission observable: plus (2k<n+>) | total"),
    "evolve_method": _Field("str", "auto", "time integrator: auto | rk45 | expm"),
    "rtol": _Field("float", 1e-8, "relative integrator tolerance"),
    "atol": _Field("float", 1e-10, "absolute integrator tolerance"),
    # scan grids
    "scan_points": _Field("int", 81, "points per detuning scan"),
    "scan_span_mhz": _Field("float", 25.0, "half-width of the scan grid (MHz)"),
    "scan_center_mhz": _Field("str", "auto", "scan center (MHz) or 'auto'"),
    "dispersion_delta_p_min_mhz": _Field("float", -20.0, "dispersion curve: first Delta_p (MHz)"),
    "dispersion_delta_p_max_mhz": _Field("float", 20.0, "dispersion curve: last Delta_p (MHz)"),
    "dispersion_delta_p_step_mhz": _Field("float", 5.0, "dispersion curve: Delta_p step (MHz)"),
    # fits
    "fit_bracket_min_mhz": _Field("float", 5.0, "g0 fit bracket lower edge (MHz)"),
    "fit_bracket_max_mhz": _Field("float", 25.0, "g0 fit bracket upper edge (MHz)"),
    "fit_xatol_mhz": _Field("float", 0.005, "g0 fit absolute tolerance (MHz)"),
    "fit_coarse_points": _Field("int", 7, "coarse bracket scan points before refinement"),
    "input_csv": _Field("str", "", "measured-curve CSV for fit protocols; empty = synthesize"),
    "sideband_offset_mhz": _Field("float", 45.0, "known modulation sideband offset for self-calibration (MHz)"),
    # error budget
    "budget_omega_397_err_mhz": _Field("float", 0.4, "1-sigma uncertainty of Omega_397 (MHz)"),
    "budget_b_field_err_gauss": _Field("float", 0.1, "1-sigma uncertainty of B (gauss)"),
    "budget_kappa_err_mhz": _Field("float", 0.1, "1-sigma uncertainty of kappa (MHz)"),
    # dressed-state inputs (0 = derive from g0_mhz via the transition amplitudes)
    "dressed_g1_mhz": _Field("float", 0.0, "explicit sigma+ coupling for dressed-states runs (MHz)"),
    "dressed_g2_mhz": _Field("float", 0.0, "explicit sigma- coupling for dressed-states runs (MHz)"),
    # independent-estimate helpers
    "g0_ideal_mhz": _Field("float", 17.3, "coupling for a perfectly localized ion (MHz)"),
    "positional_spread_nm": _Field("float", 94.0, "rms axial position spread Delta z (nm)"),
    "wavelength_nm": _Field("float", 866.0, "cavity standing-wave wavelength (nm)"),
    # drive-amplitude estimation
    "peak_ratio": _Field("float", 0.0, "measured with-ion/without-ion peak transmission ratio"),
    "drive_grid_min": _Field("float", 0.005, "drive grid lower edge, units of kappa"),
    "drive_grid_max": _Field("float", 0.1, "drive grid upper edge, units of kappa"),
    "drive_grid_points": _Field("int", 20, "log-spaced drive grid size"),
}

_VALID_TOKENS = {
    "level_scheme": {"eight_level", "three_level", "two_level"},
    "pulse_shape": {"rectangular", "sin2_ramp"},
    "emission_initial": {"mixture", "lower", "upper"},
    "transmission_signal": {"plus", "total"},
    "evolve_method": {"auto", "rk45", "expm"},
}


def _parse_value(key: str, raw: Any, errors: list[str]) -> Any:
    spec = CONFIG_SCHEMA[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if spec.py_type == "float":
            return float(text)
        if spec.py_type == "int":
            return int(text)
        if spec.py_type == "bool":
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if spec.py_type == "complex":
            return complex(text.replace(" ", ""))
        return text
    except ValueError:
        errors.append(f"{key}: cannot parse {raw!r} as {spec.py_type}")
        return spec.default


def _format_value(key: str, value: Any) -> str:
    spec = CONFIG_SCHEMA[key]
    if spec.py_type == "bool":
        return "true" if value else "false"
    if spec.py_type in ("float", "complex", "int"):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class SystemConfig:
    """Flat, validated run configuration. See CONFIG_SCHEMA for units."""

    level_scheme: str = "eight_level"
    no_ion: bool = False
    g0_mhz: float = 15.1
    kappa_mhz: float = 4.1
    gamma_s_mhz: float = 10.764
    gamma_d_mhz: float = 0.736
    omega_397_mhz: float = 11.9
    delta_p_mhz: float = -10.0
    delta_c_mhz: float = 0.0
    delta_866_mhz: float = 0.0
    drive_amplitude_mhz: float = 0.032
    b_field_gauss: float = 0.9
    mu_b_mhz_per_gauss: float = 1.3996
    lande_g_s: float = 2.002
    lande_g_p: float = 2.0 / 3.0
    lande_g_d: float = 0.8
    pump_pol_m1: complex = 0j
    pump_pol_0: complex = 1.0 + 0j
    pump_pol_p1: complex = 0j
    fock_cutoff: int = 1
    pulse_shape: str = "rectangular"
    pulse_duration_us: float = 0.3
    pulse_ramp_us: float = 0.05
    ringdown_factor: float = 5.0
    reset_rate_mhz: float = 0.05
    prepared_sublevel: str = "D:-1.5"
    emission_initial: str = "mixture"
    transmission_signal: str = "plus"
    evolve_method: str = "auto"
    rtol: float = 1e-8
    atol: float = 1e-10
    scan_points: int = 81
    scan_span_mhz: float = 25.0
    scan_center_mhz: str = "auto"
    dispersion_delta_p_min_mhz: float = -20.0
    dispersion_delta_p_max_mhz: float = 20.0
    dispersion_delta_p_step_mhz: float = 5.0
    fit_bracket_min_mhz: float = 5.0
    fit_bracket_max_mhz: float = 25.0
    fit_xatol_mhz: float = 0.005
    fit_coarse_points: int = 7
    input_csv: str = ""
    sideband_offset_mhz: float = 45.0
    budget_omega_397_err_mhz: float = 0.4
    budget_b_field_err_gauss: float = 0.1
    budget_kappa_err_mhz: float = 0.1
    dressed_g1_mhz: float = 0.0
    dressed_g2_mhz: float = 0.0
    g0_ideal_mhz: float = 17.3
    positional_spread_nm: float = 94.0
    wavelength_nm: float = 866.0
    peak_ratio: float = 0.0
    drive_grid_min: float = 0.005
    drive_grid_max: float = 0.1
    drive_grid_points: int = 20

    # -- validation ---------------------------------------------------------

    def violations(self) -> list[str]:
        """Every schema violation, in schema order. Empty list means valid."""
        v: list[str] = []
        for key, allowed in _VALID_TOKENS.items():
            val = getattr(self, key)
            if val not in allowed:
                v.append(f"{key}: {val!r} not in {sorted(allowed)}")
        if self.g0_mhz < 0:
            v.append("g0_mhz: must be >= 0")
        if self.kappa_mhz <= 0:
            v.append("kappa_mhz: must be > 0")
        if self.gamma_s_mhz < 0 or self.gamma_d_mhz < 0:
            v.append("gamma_s_mhz/gamma_d_mhz: must be >= 0")
        if self.gamma_s_mhz + self.gamma_d_mhz <= 0:
            v.append("gamma_s_mhz + gamma_d_mhz: total P width must be > 0")
        if self.omega_397_mhz < 0:
            v.append("omega_397_mhz: must be >= 0")
        if self.drive_amplitude_mhz < 0:
            v.append("drive_amplitude_mhz: must be >= 0")
        if not 1 <= self.fock_cutoff <= 8:
            v.append("fock_cutoff: must be in 1..8")
        if self.pulse_duration_us <= 0:
            v.append("pulse_duration_us: must be > 0")
        if self.pulse_ramp_us < 0:
            v.append("pulse_ramp_us: must be >= 0")
        if self.pulse_shape == "sin2_ramp" and 2 * self.pulse_ramp_us > self.pulse_duration_us:
            v.append("pulse_ramp_us: ramps do not fit inside pulse_duration_us")
        if self.ringdown_factor < 0:
            v.append("ringdown_factor: must be >= 0")
        if self.reset_rate_mhz < 0:
            v.append("reset_rate_mhz: must be >= 0")
        if self.mu_b_mhz_per_gauss <= 0:
            v.append("mu_b_mhz_per_gauss: must be > 0")
        pol_norm = (
            abs(self.pump_pol_m1) ** 2
            + abs(self.pump_pol_0) ** 2
            + abs(self.pump_pol_p1) ** 2
        )
        if abs(pol_norm - 1.0) > 1e-12:
            v.append(
                f"pump_pol_*: |eps|^2 sums to {pol_norm!r}, must equal 1 within 1e-12"
            )
        if self.rtol <= 0 or self.atol <= 0:
            v.append("rtol/atol: must be > 0")
        if self.scan_points < 5:
            v.append("scan_points: must be >= 5")
        if self.scan_span_mhz <= 0:
            v.append("scan_span_mhz: must be > 0")
        if self.scan_center_mhz != "auto":
            try:
                float(self.scan_center_mhz)
            except ValueError:
                v.append("scan_center_mhz: must be 'auto' or a number")
        if self.dispersion_delta_p_step_mhz <= 0:
            v.append("dispersion_delta_p_step_mhz: must be > 0")
        if self.dispersion_delta_p_min_mhz > self.dispersion_delta_p_max_mhz:
            v.append("dispersion_delta_p_min_mhz: must be <= dispersion_delta_p_max_mhz")
        if not 0 < self.fit_bracket_min_mhz < self.fit_bracket_max_mhz:
            v.append("fit_bracket_min_mhz/fit_bracket_max_mhz: need 0 < min < max")
        if self.fit_xatol_mhz <= 0:
            v.append("fit_xatol_mhz: must be > 0")
        if self.fit_coarse_points < 3:
            v.append("fit_coarse_points: must be >= 3")
        if self.dressed_g1_mhz < 0 or self.dressed_g2_mhz < 0:
            v.append("dressed_g1_mhz/dressed_g2_mhz: must be >= 0")
        if not 0 < self.drive_grid_min < self.drive_grid_max:
            v.append("drive_grid_min/drive_grid_max: need 0 < min < max")
        if self.drive_grid_points < 4:
            v.append("drive_grid_points: must be >= 4")
        try:
            self.prepared_level()
        except (ValueError, KeyError):
            v.append(
                f"prepared_sublevel: {self.prepared_sublevel!r} not 'manifold:m' in scheme"
            )
        return v

    def validated(self) -> "SystemConfig":
        v = self.violations()
        if v:
            raise ConfigError(v)
        return self

    # -- derived objects ----------------------------------------------------

    def scheme(self) -> LevelScheme:
        if self.level_scheme == "eight_level":
            return LevelScheme.eight_level(self.lande_g_s, self.lande_g_p, self.lande_g_d)
        if self.level_scheme == "three_level":
            return LevelScheme.three_level(self.lande_g_p, self.lande_g_d)
        return LevelScheme.two_level(self.lande_g_p, self.lande_g_d)

    def env(self) -> MagneticEnvironment:
        return MagneticEnvironment(self.b_field_gauss, self.mu_b_mhz_per_gauss)

    def pulse(self) -> PulseShape:
        return PulseShape(self.pulse_shape, self.pulse_duration_us, self.pulse_ramp_us)

    def pump_polarization(self) -> dict[int, complex]:
        return {-1: self.pump_pol_m1, 0: self.pump_pol_0, +1: self.pump_pol_p1}

    def prepared_level(self) -> tuple[str, float]:
        manifold, _, m_text = self.prepared_sublevel.partition(":")
        if not m_text:
            raise ValueError(self.prepared_sublevel)
        level = (manifold, float(m_text))
        if not self.no_ion:
            self.scheme().index(*level)  # raises KeyError if absent
        return level

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, mapping: dict[str, Any]) -> "SystemConfig":
        errors: list[str] = []
        unknown = sorted(set(mapping) - set(CONFIG_SCHEMA))
        errors.extend(f"unknown key '{k}'" for k in unknown)
        values: dict[str, Any] = {}
        for key, raw in mapping.items():
            if key in CONFIG_SCHEMA:
                values[key] = _parse_value(key, raw, errors)
        cfg = cls(**values)
        errors.extend(cfg.violations())
        if errors:
            raise ConfigError(errors)
        return cfg

    def with_updates(self, **updates: Any) -> "SystemConfig":
        errors: list[str] = []
        parsed = {k: _parse_value(k, v, errors) if k in CONFIG_SCHEMA else v
                  for k, v in updates.items()}
        unknown = sorted(set(parsed) - set(CONFIG_SCHEMA))
        errors.extend(f"unknown key '{k}'" for k in unknown)
        if errors:
            raise ConfigError(errors)
        cfg = replace(self, **parsed)
        return cfg.validated()

    def to_text(self) -> str:
        lines = ["# ioncavity-sim configuration"]
        for key in CONFIG_SCHEMA:
            lines.append(f"{key} = {_format_value(key, getattr(self, key))}")
        return "\n".join(lines) + "\n"

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_file(cls, path: str | Path) -> "SystemConfig":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "SystemConfig":
        raw: dict[str, str] = {}
        errors: list[str] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
                continue
            key = key.strip()
            if key in raw:
                errors.append(f"line {lineno}: duplicate key '{key}'")
                continue
            raw[key] = value.strip()
        if errors:
            raise ConfigError(errors)
        return cls.from_dict(raw)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# ---------------------------------------------------------------------------
# Operator builders
# ---------------------------------------------------------------------------

_ATOM, _PLUS, _MINUS = "atom", "sigma_plus", "sigma_minus"


def composite_space(cfg: SystemConfig) -> HilbertSpace:
    mode_dim = cfg.fock_cutoff + 1
    if cfg.no_ion:
        return HilbertSpace(((_PLUS, mode_dim), (_MINUS, mode_dim)))
    return HilbertSpace(
        ((_ATOM, cfg.scheme().dim), (_PLUS, mode_dim), (_MINUS, mode_dim))
    )


def _require_atom(cfg: SystemConfig, what: str) -> LevelScheme:
    if cfg.no_ion:
        raise ConfigError([f"{what} requires an atom but no_ion is set"])
    return cfg.scheme()


def _embed_atom(cfg: SystemConfig, atom_op: OperatorMatrix) -> OperatorMatrix:
    mode_dim = cfg.fock_cutoff + 1
    eye_plus = OperatorMatrix.identity(HilbertSpace.single(_PLUS, mode_dim))
    eye_minus = OperatorMatrix.identity(HilbertSpace.single(_MINUS, mode_dim))
    return tensor_product([atom_op, eye_plus, eye_minus])


def _atom_transfer(
    scheme: LevelScheme, upper: tuple[str, float], lower: tuple[str, float],
    amplitude: complex,
) -> dict[tuple[int, int], complex]:
    return {(scheme.index(*upper), scheme.index(*lower)): amplitude}


def _atom_op(cfg: SystemConfig, entries: dict[tuple[int, int], complex]) -> OperatorMatrix:
    scheme = cfg.scheme()
    atom_space = HilbertSpace.single(_ATOM, scheme.dim)
    return _embed_atom(cfg, OperatorMatrix.from_entries(atom_space, entries))


def _mode_ops(cfg: SystemConfig) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Annihilation operators for both modes embedded in the composite space."""
    mode_dim = cfg.fock_cutoff + 1
    a = annihilation_operator(cfg.fock_cutoff, _PLUS)
    b = annihilation_operator(cfg.fock_cutoff, _MINUS)
    eye_plus = OperatorMatrix.identity(HilbertSpace.single(_PLUS, mode_dim))
    eye_minus = OperatorMatrix.identity(HilbertSpace.single(_MINUS, mode_dim))
    if cfg.no_ion:
        a_plus = tensor_product([a, eye_minus])
        a_minus = tensor_product([eye_plus, b])
    else:
        eye_atom = OperatorMatrix.identity(HilbertSpace.single(_ATOM, cfg.scheme().dim))
        a_plus = tensor_product([eye_atom, a, eye_minus])
        a_minus = tensor_product([eye_atom, eye_plus, b])
    return a_plus, a_minus


def mode_number_operators(cfg: SystemConfig) -> tuple[OperatorMatrix, OperatorMatrix]:
    a_plus, a_minus = _mode_ops(cfg)
    return a_plus.dagger() @ a_plus, a_minus.dagger() @ a_minus


def _manifold_projector(cfg: SystemConfig, manifold: str) -> OperatorMatrix:
    scheme = cfg.scheme()
    entries = {}
    if manifold in scheme.manifolds:
        for s in scheme.sublevels_of(manifold):
            i = scheme.index(manifold, s.m)
            entries[(i, i)] = 1.0
    atom_space = HilbertSpace.single(_ATOM, scheme.dim)
    return _embed_atom(cfg, OperatorMatrix.from_entries(atom_space, entries))


def build_H0_raman(cfg: SystemConfig) -> OperatorMatrix:
    """Detuning part of the emission problem: delta_p on S, delta_c on D."""
    _require_atom(cfg, "build_H0_raman")
    return (
        TWO_PI * cfg.delta_p_mhz * _manifold_projector(cfg, "S")
        + TWO_PI * cfg.delta_c_mhz * _manifold_projector(cfg, "D")
    )


def build_HB(cfg: SystemConfig) -> OperatorMatrix:
    """Zeeman term; traceless inside each manifold."""
    scheme = _require_atom(cfg, "build_HB")
    env = cfg.env()
    entries = {}
    for s in scheme.sublevels:
        i = scheme.index(s.manifold, s.m)
        entries[(i, i)] = zeeman_shift((s.manifold, s.m), env, scheme)
    atom_space = HilbertSpace.single(_ATOM, scheme.dim)
    return _embed_atom(cfg, OperatorMatrix.from_entries(atom_space, entries))


def build_pump_coupling(cfg: SystemConfig) -> OperatorMatrix:
    """Pump Hamiltonian at full envelope (f = 1)."""
    scheme = _require_atom(cfg, "build_pump_coupling")
    entries: dict[tuple[int, int], complex] = {}
    if "S" in scheme.manifolds and "P" in scheme.manifolds:
        pol = cfg.pump_polarization()
        half_omega = TWO_PI * cfg.omega_397_mhz / 2.0
        j_s = scheme.sublevels_of("S")[0].j
        j_p = scheme.sublevels_of("P")[0].j
        for s_lvl in scheme.sublevels_of("S"):
            for p_lvl in scheme.sublevels_of("P"):
                for q in (-1, 0, 1):
                    if pol[q] == 0:
                        continue
                    coeff = clebsch_gordan(j_s, s_lvl.m, q, j_p, p_lvl.m)
                    if coeff == 0.0:
                        continue
                    amp = half_omega * pol[q] * coeff
                    i_p = scheme.index("P", p_lvl.m)
                    i_s = scheme.index("S", s_lvl.m)
                    entries[(i_p, i_s)] = entries.get((i_p, i_s), 0j) + amp
                    entries[(i_s, i_p)] = entries.get((i_s, i_p), 0j) + amp.conjugate()
    return _atom_op(cfg, entries)


def build_H_pump(cfg: SystemConfig, t: float) -> OperatorMatrix:
    """Pump Hamiltonian at time t (envelope included)."""
    return cfg.pulse().envelope(t) * build_pump_coupling(cfg)


def build_H_ioncav(cfg: SystemConfig) -> OperatorMatrix:
    """Two-mode ion-cavity coupling on the P <-> D transition."""
    scheme = _require_atom(cfg, "build_H_ioncav")
    a_plus, a_minus = _mode_ops(cfg)
    g0 = TWO_PI * cfg.g0_mhz
    total = OperatorMatrix.zero(composite_space(cfg))
    if "D" not in scheme.manifolds or "P" not in scheme.manifolds or g0 == 0.0:
        return total
    j_d = scheme.sublevels_of("D")[0].j
    j_p = scheme.sublevels_of("P")[0].j
    for d_lvl in scheme.sublevels_of("D"):
        for p_lvl in scheme.sublevels_of("P"):
            for q, mode in ((+1, a_plus), (-1, a_minus)):
                coeff = clebsch_gordan(j_d, d_lvl.m, q, j_p, p_lvl.m)
                if coeff == 0.0:
                    continue
                raise_op = _atom_op(
                    cfg,
                    _atom_transfer(scheme, ("P", p_lvl.m), ("D", d_lvl.m), g0 * coeff),
                )
                term = mode @ raise_op
                total = total + term + term.dagger()
    return total


def build_H0_transmission(cfg: SystemConfig) -> OperatorMatrix:
    """Probe-frame detuning: delta_866 on D minus delta_866 per photon."""
    n_plus, n_minus = mode_number_operators(cfg)
    h = -TWO_PI * cfg.delta_866_mhz * (n_plus + n_minus)
    if not cfg.no_ion:
        h = h + TWO_PI * cfg.delta_866_mhz * _manifold_projector(cfg, "D")
    return h


def build_H_drive(cfg: SystemConfig) -> OperatorMatrix:
    """Coherent drive E(a_+ + a_+') injecting sigma+ photons."""
    a_plus, _ = _mode_ops(cfg)
    e = TWO_PI * cfg.drive_amplitude_mhz
    return e * (a_plus + a_plus.dagger())


def build_collapse_operators(cfg: SystemConfig) -> list[OperatorMatrix]:
    """Square-rooted-rate collapse set: cavity decay plus P -> S and P -> D.

    Feeds L(rho, O) = 2 O rho O' - O'O rho - rho O'O; the total P population
    decay rate is 2*(gamma_s + gamma_d) for every P sublevel.
    """
    a_plus, a_minus = _mode_ops(cfg)
    sqrt_kappa = math.sqrt(TWO_PI * cfg.kappa_mhz)
    ops = [sqrt_kappa * a_plus, sqrt_kappa * a_minus]
    if cfg.no_ion:
        return ops
    scheme = cfg.scheme()
    if "P" not in scheme.manifolds:
        return ops
    j_p = scheme.sublevels_of("P")[0].j
    for manifold, gamma_mhz in (("S", cfg.gamma_s_mhz), ("D", cfg.gamma_d_mhz)):
        if manifold not in scheme.manifolds or gamma_mhz == 0.0:
            continue
        sqrt_gamma = math.sqrt(TWO_PI * gamma_mhz)
        j_low = scheme.sublevels_of(manifold)[0].j
        for low in scheme.sublevels_of(manifold):
            for p_lvl in scheme.sublevels_of("P"):
                for q in (-1, 0, 1):
                    coeff = clebsch_gordan(j_low, low.m, q, j_p, p_lvl.m)
                    if coeff == 0.0:
                        continue
                    ops.append(
                        _atom_op(
                            cfg,
                            _atom_transfer(
                                scheme, (manifold, low.m), ("P", p_lvl.m),
                                sqrt_gamma * coeff,
                            ),
                        )
                    )
    return ops


def build_reset_operators(cfg: SystemConfig) -> list[OperatorMatrix]:
    """Weak re-preparation channel into the optically pumped sublevel.

    Models the periodic state preparation between probe cycles; rate
    reset_rate_mhz should stay well below kappa so the probed dynamics are
    undisturbed. Returns [] when disabled or without an atom. P sublevels
    are excluded (they decay radiatively anyway).
    """
    if cfg.no_ion or cfg.reset_rate_mhz <= 0.0:
        return []
    scheme = cfg.scheme()
    target = cfg.prepared_level()
    sqrt_rate = math.sqrt(TWO_PI * cfg.reset_rate_mhz)
    ops = []
    for s in scheme.sublevels:
        if s.manifold == "P" or (s.manifold, s.m) == target:
            continue
        ops.append(
            _atom_op(
                cfg,
                _atom_transfer(scheme, target, (s.manifold, s.m), sqrt_rate),
            )
        )
    return ops


def excitation_number_operator(cfg: SystemConfig) -> OperatorMatrix:
    """Conserved quantity of the coupling: P population + total photon number."""
    n_plus, n_minus = mode_number_operators(cfg)
    n = n_plus + n_minus
    if not cfg.no_ion:
        n = n + _manifold_projector(cfg, "P")
    return n
