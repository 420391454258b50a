"""Shared fixtures and an independent angular-momentum oracle.

The Clebsch-Gordan/Wigner-3j oracle here deliberately avoids the Racah sum
used by the package: coupled states are built by highest-weight construction
(orthogonality within each magnetization subspace, Condon-Shortley sign) and
repeated application of the lowering operator. Agreement between the two
routes is then a real cross-check, not a reimplementation test.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from ioncavity.model import SystemConfig

_TABLE_CACHE: dict[tuple[float, float], dict] = {}


def _lower(j: float, m: float) -> float:
    """Matrix element <j, m-1| J- |j, m>."""
    if m - 1 < -j - 1e-9:
        return 0.0
    return math.sqrt(j * (j + 1) - m * (m - 1))


def cg_table(j1: float, j2: float) -> dict:
    """All <j1 m1, j2 m2 | J M> as {(m1, m2, J, M): coeff}."""
    key = (float(j1), float(j2))
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    m1s = [j1 - k for k in range(int(round(2 * j1)) + 1)]
    m2s = [j2 - k for k in range(int(round(2 * j2)) + 1)]

    j_values = []
    j = j1 + j2
    while j >= abs(j1 - j2) - 1e-9:
        j_values.append(j)
        j -= 1.0

    coupled: dict[tuple[float, float], dict] = {}
    for n, big_j in enumerate(j_values):
        # Highest state |J, M=J>: the unique unit vector in the m1+m2=J
        # subspace orthogonal to every |J', J> with J' > J.
        sub = [(m1, m2) for m1 in m1s for m2 in m2s
               if abs(m1 + m2 - big_j) < 1e-9]
        prev = [coupled[(jp, big_j)] for jp in j_values[:n]]
        if not prev:
            vec = np.array([1.0])
        else:
            a = np.array([[v.get(k, 0.0) for k in sub] for v in prev])
            _, _, vt = np.linalg.svd(a)
            vec = vt[-1]
        for c, (m1, _) in enumerate(sub):
            if abs(m1 - min(j1, big_j + j2)) < 1e-9:  # top m1 present in sub
                if vec[c] < 0:
                    vec = -vec
                break
        state = {k: float(v) for k, v in zip(sub, vec) if abs(v) > 1e-14}
        coupled[(big_j, big_j)] = state

        m_cur = big_j
        while m_cur > -big_j + 1e-9:
            src = coupled[(big_j, m_cur)]
            new: dict = {}
            for (m1, m2), c in src.items():
                f1 = _lower(j1, m1)
                if f1:
                    new[(m1 - 1, m2)] = new.get((m1 - 1, m2), 0.0) + f1 * c
                f2 = _lower(j2, m2)
                if f2:
                    new[(m1, m2 - 1)] = new.get((m1, m2 - 1), 0.0) + f2 * c
            norm = _lower(big_j, m_cur)
            coupled[(big_j, m_cur - 1)] = {
                k: v / norm for k, v in new.items() if abs(v / norm) > 1e-14
            }
            m_cur -= 1.0

    table: dict = {}
    for (big_j, big_m), state in coupled.items():
        for (m1, m2), c in state.items():
            table[(m1, m2, big_j, big_m)] = c
    _TABLE_CACHE[key] = table
    return table


def wigner_3j_oracle(j1, j2, j3, m1, m2, m3) -> float:
    """3-j from the ladder-built CG table."""
    if abs(m1 + m2 + m3) > 1e-9:
        return 0.0
    if j3 > j1 + j2 + 1e-9 or j3 < abs(j1 - j2) - 1e-9:
        return 0.0
    cg = cg_table(j1, j2).get((m1, m2, float(j3), float(-m3)), 0.0)
    phase = int(round(j1 - j2 - m3))
    sign = -1.0 if phase % 2 else 1.0
    return sign * cg / math.sqrt(2 * j3 + 1)


def clebsch_oracle(j1, m1, j2, m2, j3, m3) -> float:
    """<j1 m1, j2 m2 | j3 m3> from the same table."""
    return cg_table(j1, j2).get((m1, m2, float(j3), float(m3)), 0.0)


@pytest.fixture
def cfg() -> SystemConfig:
    return SystemConfig().validated()


@pytest.fixture
def fast_cfg() -> SystemConfig:
    """Reduced grids: same physics, second-scale runtimes."""
    return SystemConfig().validated().with_updates(scan_points=11)
