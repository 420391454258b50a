"""Angular-momentum coefficients and the atomic level scheme.

Half-integer quantum numbers are handled exactly as integer twice-values
(2j, 2m); the Racah closed-form sum for the Wigner 3-j symbol is evaluated
with exact rational arithmetic before the final square root, so coefficients
are accurate to machine precision for any j that arises here.

The dipole coupling coefficient follows the fixed convention

    C(j_u m_u, 1 q; j_v m_v)
        = (-1)^(j_u - 1 + m_v) * sqrt(2 j_v + 1)
          * threej(j_u, 1, j_v; m_u, q, -m_v)

with q in {-1, 0, +1} labeling sigma-, pi, sigma+ photon polarizations.
Signs matter downstream (interference between decay paths), so this phase
must not be "simplified".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError

__all__ = [
    "wigner_3j",
    "clebsch_gordan",
    "Sublevel",
    "LevelScheme",
    "MagneticEnvironment",
    "zeeman_shift",
    "TWO_PI",
]

TWO_PI = 2.0 * math.pi


def _twice(x, name: str) -> int:
    """Exact integer twice-value of a half-integer argument."""
    if isinstance(x, float):
        # Floats must represent the half-integer exactly (0.5 steps do).
        if x * 2 != round(x * 2):
            raise ValueError(f"{name}={x} is not a half-integer")
        return int(round(x * 2))
    t = 2 * Fraction(x)
    if t.denominator != 1:
        raise ValueError(f"{name}={x} is not a half-integer")
    return int(t)


def _triangle_ok(tj1: int, tj2: int, tj3: int) -> bool:
    return (
        abs(tj1 - tj2) <= tj3 <= tj1 + tj2
        and (tj1 + tj2 + tj3) % 2 == 0
    )


def wigner_3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3-j symbol via the Racah formula.

    Returns 0.0 for arguments violating the selection rules; raises for
    malformed (non-half-integer or |m|>j) input.
    """
    tj = [_twice(j, n) for j, n in ((j1, "j1"), (j2, "j2"), (j3, "j3"))]
    tm = [_twice(m, n) for m, n in ((m1, "m1"), (m2, "m2"), (m3, "m3"))]
    for k in range(3):
        if tj[k] < 0:
            raise ValueError(f"negative angular momentum j{k+1}")
        if (tj[k] + tm[k]) % 2 != 0:
            raise ValueError(
                f"j{k+1}, m{k+1} differ in half-integer parity: {tj[k]/2}, {tm[k]/2}"
            )
        if abs(tm[k]) > tj[k]:
            raise ValueError(f"|m{k+1}| exceeds j{k+1}")
    if tm[0] + tm[1] + tm[2] != 0:
        return 0.0
    if not _triangle_ok(*tj):
        return 0.0

    tj1, tj2, tj3 = tj
    tm1, tm2, tm3 = tm
    # All factorial arguments below are guaranteed integral; work in
    # twice-values and halve at the point of use.
    def f(twice_val: int) -> int:
        assert twice_val % 2 == 0 and twice_val >= 0
        return math.factorial(twice_val // 2)

    # Triangle coefficient and m-dependent prefactor, both exact rationals.
    pref = Fraction(
        f(tj1 + tj2 - tj3) * f(tj1 - tj2 + tj3) * f(-tj1 + tj2 + tj3),
        f(tj1 + tj2 + tj3 + 2),
    )
    pref *= (
        f(tj1 + tm1) * f(tj1 - tm1)
        * f(tj2 + tm2) * f(tj2 - tm2)
        * f(tj3 + tm3) * f(tj3 - tm3)
    )

    # Racah sum over all t with non-negative factorial arguments.
    t_min = max(0, (tj2 - tj3 - tm1) // 2, (tj1 - tj3 + tm2) // 2)
    t_max = min(
        (tj1 + tj2 - tj3) // 2,
        (tj1 - tm1) // 2,
        (tj2 + tm2) // 2,
    )
    total = Fraction(0)
    for t in range(t_min, t_max + 1):
        denom = (
            math.factorial(t)
            * f(tj3 - tj2 + tm1 + 2 * t)
            * f(tj3 - tj1 - tm2 + 2 * t)
            * f(tj1 + tj2 - tj3 - 2 * t)
            * f(tj1 - tm1 - 2 * t)
            * f(tj2 + tm2 - 2 * t)
        )
        total += Fraction((-1) ** t, denom)
    if total == 0:
        return 0.0

    phase_twice = tj1 - tj2 - tm3
    assert phase_twice % 2 == 0
    sign = -1.0 if (phase_twice // 2) % 2 else 1.0
    return sign * math.sqrt(pref) * float(total)


def clebsch_gordan(j_u, m_u, q: int, j_v, m_v) -> float:
    """Dipole coupling coefficient C(j_u m_u, 1 q; j_v m_v); see module docstring."""
    if q not in (-1, 0, 1):
        raise ValueError(f"polarization index q must be -1, 0 or +1, got {q}")
    three_j = wigner_3j(j_u, 1, j_v, m_u, q, -m_v)
    if three_j == 0.0:
        return 0.0
    t_phase = _twice(j_u, "j_u") - 2 + _twice(m_v, "m_v")
    assert t_phase % 2 == 0
    sign = -1.0 if (t_phase // 2) % 2 else 1.0
    t_jv = _twice(j_v, "j_v")
    return sign * math.sqrt(t_jv + 1.0) * three_j


# ---------------------------------------------------------------------------
# Level scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sublevel:
    """One Zeeman sublevel |manifold, m_j> with its Lande factor."""

    manifold: str
    j: float
    m: float
    lande_g: float

    def __post_init__(self):
        _twice(self.j, "j")
        tm = _twice(self.m, "m")
        if abs(tm) > _twice(self.j, "j"):
            raise ValueError(f"|m|={self.m} exceeds j={self.j} in {self.manifold}")


@dataclass(frozen=True)
class LevelScheme:
    """Ordered atomic basis. Index order: manifolds as listed, m ascending."""

    sublevels: tuple[Sublevel, ...]

    @property
    def dim(self) -> int:
        return len(self.sublevels)

    @property
    def manifolds(self) -> tuple[str, ...]:
        seen: list[str] = []
        for s in self.sublevels:
            if s.manifold not in seen:
                seen.append(s.manifold)
        return tuple(seen)

    def index(self, manifold: str, m) -> int:
        tm = _twice(m, "m")
        for i, s in enumerate(self.sublevels):
            if s.manifold == manifold and _twice(s.m, "m") == tm:
                return i
        raise KeyError(f"no sublevel |{manifold}, m={m}> in scheme")

    def sublevels_of(self, manifold: str) -> tuple[Sublevel, ...]:
        out = tuple(s for s in self.sublevels if s.manifold == manifold)
        if not out:
            raise KeyError(f"unknown manifold '{manifold}'")
        return out

    def lande(self, manifold: str) -> float:
        return self.sublevels_of(manifold)[0].lande_g

    @staticmethod
    def _manifold(label: str, j: float, g: float, keep=None) -> list[Sublevel]:
        tj = _twice(j, "j")
        out = []
        for tm in range(-tj, tj + 1, 2):
            m = tm / 2.0
            if keep is None or m in keep:
                out.append(Sublevel(label, j, m, g))
        return out

    @classmethod
    def eight_level(
        cls, g_s: float = 2.002, g_p: float = 2.0 / 3.0, g_d: float = 0.8
    ) -> "LevelScheme":
        """Full S_1/2 + P_1/2 + D_3/2 scheme (2 + 2 + 4 sublevels)."""
        levels = (
            cls._manifold("S", 0.5, g_s)
            + cls._manifold("P", 0.5, g_p)
            + cls._manifold("D", 1.5, g_d)
        )
        return cls(tuple(levels))

    @classmethod
    def three_level(cls, g_p: float = 2.0 / 3.0, g_d: float = 0.8) -> "LevelScheme":
        """Ideal lambda reduction: |D,-3/2>, |D,+1/2> and shared |P,-1/2>."""
        levels = cls._manifold("P", 0.5, g_p, keep={-0.5}) + cls._manifold(
            "D", 1.5, g_d, keep={-1.5, 0.5}
        )
        return cls(tuple(levels))

    @classmethod
    def two_level(cls, g_p: float = 2.0 / 3.0, g_d: float = 0.8) -> "LevelScheme":
        """Single transition |D,-3/2> <-> |P,-1/2> (strongest sigma+ line)."""
        levels = cls._manifold("P", 0.5, g_p, keep={-0.5}) + cls._manifold(
            "D", 1.5, g_d, keep={-1.5}
        )
        return cls(tuple(levels))


@dataclass(frozen=True)
class MagneticEnvironment:
    """Static field along the quantization (cavity) axis."""

    b_field_gauss: float
    mu_b_mhz_per_gauss: float = 1.3996


def zeeman_shift(
    level: tuple[str, float], env: MagneticEnvironment, scheme: LevelScheme
) -> float:
    """First-order Zeeman shift of |manifold, m_j>, in angular units (rad/us).

    shift = 2*pi * B * g_L * mu_B * m_j  with B in gauss, mu_B in MHz/G.
    """
    manifold, m = level
    try:
        g = scheme.lande(manifold)
    except KeyError as exc:
        raise ConfigError([f"unknown manifold '{manifold}' for zeeman_shift"]) from exc
    _twice(m, "m")
    return TWO_PI * env.b_field_gauss * g * env.mu_b_mhz_per_gauss * float(m)
