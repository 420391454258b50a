"""Sparse operator algebra on labeled composite Hilbert spaces.

Conventions
-----------
* A composite space is an ordered tuple of (label, dimension) subsystems.
  Tensor products follow the same order: the first subsystem is the most
  significant index, i.e. index(i0, i1, ...) = ((i0*d1)+i1)*d2 + ...
* Operators are stored as complex128 scipy CSR matrices kept in canonical
  form, so entry iteration is deterministic (sorted by row, then column).
* Mode operators use the truncated-ladder convention: a|n> = sqrt(n)|n-1>
  with a|0> = 0 and a'|n_max> = 0, which makes the exact commutation
  relation on the truncated space [a, a'] = 1 - (n_max+1)|n_max><n_max|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, SpaceMismatchError

__all__ = [
    "HilbertSpace",
    "OperatorMatrix",
    "DensityMatrix",
    "tensor_product",
    "annihilation_operator",
    "dagger",
    "expectation",
]

# Numerical tolerances for density-matrix validation.
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-12
POSITIVITY_TOL = 1e-9
# Positivity is checked densely only up to this dimension (cost is O(d^3)).
POSITIVITY_CHECK_MAX_DIM = 64


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered collection of labeled subsystems."""

    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        labels = [name for name, _ in self.subsystems]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate subsystem labels in {labels}")
        for name, dim in self.subsystems:
            if dim < 1:
                raise DimensionMismatchError(name, 1, dim)

    @classmethod
    def single(cls, label: str, dim: int) -> "HilbertSpace":
        return cls(((label, dim),))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.subsystems)

    @property
    def total_dim(self) -> int:
        out = 1
        for _, dim in self.subsystems:
            out *= dim
        return out

    def dim(self, label: str) -> int:
        for name, dim in self.subsystems:
            if name == label:
                return dim
        raise KeyError(f"no subsystem '{label}' in {self.labels}")

    def index(self, levels: Mapping[str, int] | Sequence[int]) -> int:
        """Flat basis index from per-subsystem indices."""
        if isinstance(levels, Mapping):
            missing = set(self.labels) - set(levels)
            if missing:
                raise KeyError(f"missing subsystem indices for {sorted(missing)}")
            seq = [levels[name] for name, _ in self.subsystems]
        else:
            seq = list(levels)
            if len(seq) != len(self.subsystems):
                raise ValueError(
                    f"expected {len(self.subsystems)} indices, got {len(seq)}"
                )
        flat = 0
        for (name, dim), i in zip(self.subsystems, seq):
            if not 0 <= i < dim:
                raise DimensionMismatchError(name, dim, i)
            flat = flat * dim + i
        return flat


def _as_canonical_csr(matrix) -> sp.csr_matrix:
    mat = sp.csr_matrix(matrix, dtype=np.complex128)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


class OperatorMatrix:
    """Sparse operator on a HilbertSpace with deterministic entry order."""

    __slots__ = ("space", "matrix")

    def __init__(self, space: HilbertSpace, matrix):
        mat = _as_canonical_csr(matrix)
        d = space.total_dim
        if mat.shape != (d, d):
            raise ValueError(f"matrix shape {mat.shape} != space dimension {d}")
        self.space = space
        self.matrix = mat

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_entries(
        cls, space: HilbertSpace, entries: Mapping[tuple[int, int], complex]
    ) -> "OperatorMatrix":
        d = space.total_dim
        rows, cols, vals = [], [], []
        for (r, c), v in entries.items():
            rows.append(r)
            cols.append(c)
            vals.append(v)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(d, d), dtype=np.complex128)
        return cls(space, mat)

    @classmethod
    def identity(cls, space: HilbertSpace) -> "OperatorMatrix":
        return cls(space, sp.identity(space.total_dim, dtype=np.complex128))

    @classmethod
    def zero(cls, space: HilbertSpace) -> "OperatorMatrix":
        return cls(space, sp.csr_matrix((space.total_dim, space.total_dim)))

    # -- inspection ---------------------------------------------------------

    def entries(self) -> Iterator[tuple[int, int, complex]]:
        """Yield (row, col, value) sorted by (row, col)."""
        mat = self.matrix
        for r in range(mat.shape[0]):
            for k in range(mat.indptr[r], mat.indptr[r + 1]):
                yield r, int(mat.indices[k]), complex(mat.data[k])

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def norm_max(self) -> float:
        return float(np.max(np.abs(self.matrix.data))) if self.matrix.nnz else 0.0

    def is_hermitian(self, tol: float = HERMITICITY_TOL) -> bool:
        diff = self.matrix - self.matrix.getH()
        scale = max(1.0, self.norm_max())
        bound = float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
        return bound <= tol * scale

    def trace(self) -> complex:
        return complex(self.matrix.diagonal().sum())

    # -- algebra ------------------------------------------------------------

    def _check_space(self, other: "OperatorMatrix"):
        if self.space != other.space:
            raise SpaceMismatchError(
                f"operator spaces differ: {self.space.labels}{self.space.dims}"
                f" vs {other.space.labels}{other.space.dims}"
            )

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check_space(other)
        return OperatorMatrix(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check_space(other)
        return OperatorMatrix(self.space, self.matrix - other.matrix)

    def __neg__(self) -> "OperatorMatrix":
        return OperatorMatrix(self.space, -self.matrix)

    def __mul__(self, scalar: complex) -> "OperatorMatrix":
        return OperatorMatrix(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check_space(other)
        return OperatorMatrix(self.space, self.matrix @ other.matrix)

    def dagger(self) -> "OperatorMatrix":
        return OperatorMatrix(self.space, self.matrix.getH())


class DensityMatrix(OperatorMatrix):
    """Operator constrained to be a valid state (unit trace, hermitian, PSD)."""

    __slots__ = ()

    def __init__(self, space: HilbertSpace, matrix, validate: bool = True):
        super().__init__(space, matrix)
        if validate:
            self.validate()

    @classmethod
    def pure(cls, space: HilbertSpace, index: int) -> "DensityMatrix":
        d = space.total_dim
        if not 0 <= index < d:
            raise ValueError(f"basis index {index} outside dimension {d}")
        return cls(space, sp.coo_matrix(([1.0], ([index], [index])), shape=(d, d)))

    @classmethod
    def mixture(
        cls, space: HilbertSpace, weights: Iterable[tuple[int, float]]
    ) -> "DensityMatrix":
        """Diagonal statistical mixture of basis states."""
        d = space.total_dim
        idx, w = zip(*weights)
        return cls(space, sp.coo_matrix((w, (idx, idx)), shape=(d, d)))

    @classmethod
    def from_vector(cls, space: HilbertSpace, psi: np.ndarray) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=np.complex128).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(space, sp.csr_matrix(np.outer(psi, psi.conj())))

    def validate(
        self,
        trace_tol: float = TRACE_TOL,
        herm_tol: float = HERMITICITY_TOL,
        positivity_tol: float = POSITIVITY_TOL,
    ) -> None:
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {tr} deviates from 1")
        if not self.is_hermitian(herm_tol):
            raise ValueError("density matrix is not hermitian within tolerance")
        if self.space.total_dim <= POSITIVITY_CHECK_MAX_DIM:
            eigs = np.linalg.eigvalsh(self.to_dense())
            if eigs.min() < -positivity_tol:
                raise ValueError(f"density matrix has eigenvalue {eigs.min():.3e} < 0")

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.to_dense()).min())


def tensor_product(
    ops: Sequence[OperatorMatrix],
    spaces: Sequence[HilbertSpace] | None = None,
) -> OperatorMatrix:
    """Kronecker product of operators, one per subsystem, in the given order.

    When `spaces` is supplied each factor is checked against it and the
    mismatching subsystem is named in the raised error.
    """
    if not ops:
        raise ValueError("tensor_product needs at least one operator")
    if spaces is not None:
        if len(spaces) != len(ops):
            raise ValueError(
                f"{len(ops)} operators but {len(spaces)} spaces supplied"
            )
        for op, space in zip(ops, spaces):
            if op.space != space:
                # Report the first offending subsystem by label.
                for (got_l, got_d), (want_l, want_d) in zip(
                    op.space.subsystems, space.subsystems
                ):
                    if (got_l, got_d) != (want_l, want_d):
                        raise DimensionMismatchError(want_l, want_d, got_d)
                raise DimensionMismatchError(space.labels[0], space.total_dim,
                                             op.space.total_dim)
    mat = ops[0].matrix
    subsystems = list(ops[0].space.subsystems)
    for op in ops[1:]:
        mat = sp.kron(mat, op.matrix, format="csr")
        subsystems.extend(op.space.subsystems)
    return OperatorMatrix(HilbertSpace(tuple(subsystems)), mat)


def annihilation_operator(n_max: int, label: str = "mode") -> OperatorMatrix:
    """Truncated ladder operator on a single-mode space with cutoff n_max."""
    if n_max < 1:
        raise ValueError(f"mode cutoff must be >= 1, got {n_max}")
    dim = n_max + 1
    data = np.sqrt(np.arange(1, dim, dtype=float))
    mat = sp.diags(data, offsets=1, shape=(dim, dim), dtype=np.complex128)
    return OperatorMatrix(HilbertSpace.single(label, dim), mat)


def dagger(op: OperatorMatrix) -> OperatorMatrix:
    return op.dagger()


def expectation(rho: OperatorMatrix, op: OperatorMatrix) -> complex:
    """Tr(rho op); exact complex value, no hermiticity assumption."""
    if rho.space != op.space:
        raise SpaceMismatchError(
            f"state on {rho.space.labels}{rho.space.dims},"
            f" operator on {op.space.labels}{op.space.dims}"
        )
    # Tr(A B) = sum_ij A_ij B_ji
    return complex(rho.matrix.multiply(op.matrix.T).sum())
