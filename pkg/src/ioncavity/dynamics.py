"""Master-equation propagation and steady states.

The density matrix is vectorized row-major, v[i*d + j] = rho[i, j], so

    vec(A rho B) = (A kron B^T) vec(rho)

and the generator of  d rho/dt = -i[H, rho] + sum_k L(rho, O_k)  with
L(rho, O) = 2 O rho O' - O'O rho - rho O'O  is

    L = -i (H kron 1 - 1 kron H^T)
        + sum_k [ 2 (O_k kron conj(O_k)) - (O_k'O_k kron 1) - (1 kron (O_k'O_k)^T) ].

Two integrators are available. "expm" applies the exact matrix exponential
segment by segment (valid whenever the Hamiltonian is constant on each
segment, e.g. a rectangular pump pulse) and accumulates requested
time-integrated expectation values exactly through quadrature rows appended
to the generator. "rk45" is an adaptive Runge-Kutta 4(5) fallback for
smooth envelopes, with the same quadrature trick carried in the ODE state.
"auto" picks expm when the envelope is piecewise constant.

Every call is pure and internally single-threaded; callers may solve many
problems concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import DegenerateSteadyStateError, SolverError, SpaceMismatchError
from .linalg import DensityMatrix, HilbertSpace, OperatorMatrix
from .model import PulseShape

__all__ = [
    "lindblad_dissipator",
    "hamiltonian_superoperator",
    "dissipator_superoperator",
    "liouvillian",
    "MasterEquationProblem",
    "TrajectoryResult",
    "evolve",
    "evolve_batch",
    "steady_state",
]

TRACE_DRIFT_TOL = 1e-7
_RESIDUAL_TOL = 1e-9
_DENSE_NULLSPACE_MAX = 2048   # largest d^2 diagnosed with a dense eigensolve
_DIRECT_SOLVE_MAX = 4096      # above this many unknowns an iterative fallback kicks in
_POSITIVITY_SAMPLE_MAX = 64   # densely eigencheck sampled states up to this dim


def _same_space(ops: Iterable[OperatorMatrix], space: HilbertSpace, what: str) -> None:
    for op in ops:
        if op.space != space:
            raise SpaceMismatchError(
                f"{what}: operator lives on {op.space.labels} with dims "
                f"{op.space.dims}, expected {space.labels} with dims {space.dims}"
            )


def lindblad_dissipator(rho: OperatorMatrix, op: OperatorMatrix) -> OperatorMatrix:
    """L(rho, O) = 2 O rho O' - O'O rho - rho O'O. Traceless for any inputs."""
    _same_space([op], rho.space, "lindblad_dissipator")
    od = op.dagger()
    odo = od @ op
    return 2.0 * (op @ rho @ od) - odo @ rho - rho @ odo


def hamiltonian_superoperator(h: OperatorMatrix) -> sp.csr_matrix:
    """-i (H kron 1 - 1 kron H^T) for a hermitian H."""
    if not h.is_hermitian(1e-10):
        raise SolverError("Hamiltonian is not hermitian; refusing to build a generator")
    d = h.space.total_dim
    eye = sp.identity(d, format="csr", dtype=complex)
    m = h.matrix.astype(complex)
    return (-1j * (sp.kron(m, eye, format="csr") - sp.kron(eye, m.T, format="csr"))).tocsr()


def dissipator_superoperator(collapse: Sequence[OperatorMatrix]) -> sp.csr_matrix:
    if not collapse:
        raise ValueError("dissipator_superoperator: need at least one collapse operator")
    space = collapse[0].space
    _same_space(collapse, space, "dissipator_superoperator")
    d = space.total_dim
    eye = sp.identity(d, format="csr", dtype=complex)
    total = sp.csr_matrix((d * d, d * d), dtype=complex)
    for op in collapse:
        o = op.matrix.astype(complex)
        odo = (op.dagger() @ op).matrix.astype(complex)
        total = total + 2.0 * sp.kron(o, o.conjugate(), format="csr")
        total = total - sp.kron(odo, eye, format="csr")
        total = total - sp.kron(eye, odo.T, format="csr")
    return total.tocsr()


def liouvillian(h: OperatorMatrix, collapse: Sequence[OperatorMatrix]) -> sp.csr_matrix:
    """Full generator acting on row-major vectorized density matrices."""
    _same_space(collapse, h.space, "liouvillian")
    gen = hamiltonian_superoperator(h)
    if collapse:
        gen = (gen + dissipator_superoperator(collapse)).tocsr()
    return gen


def _trace_row(d: int) -> sp.csr_matrix:
    cols = np.arange(d) * d + np.arange(d)
    data = np.ones(d, dtype=complex)
    return sp.csr_matrix((data, (np.zeros(d, dtype=int), cols)), shape=(1, d * d))


def _expectation_rows(ops: Sequence[OperatorMatrix]) -> sp.csr_matrix | None:
    """Rows r with Tr(O rho) = r . vec(rho), i.e. r = vec(O^T)."""
    if not ops:
        return None
    rows = [op.matrix.T.tocsr().reshape((1, op.space.total_dim ** 2)) for op in ops]
    return sp.vstack(rows, format="csr")


# ---------------------------------------------------------------------------
# Time evolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MasterEquationProblem:
    """Hamiltonian (static part + optional pulsed part), collapse set, start state."""

    static_h: OperatorMatrix
    collapse_ops: tuple[OperatorMatrix, ...]
    initial_state: DensityMatrix
    drive_h: OperatorMatrix | None = None
    envelope: PulseShape | None = None

    def __post_init__(self) -> None:
        space = self.static_h.space
        _same_space(self.collapse_ops, space, "MasterEquationProblem")
        _same_space([self.initial_state], space, "MasterEquationProblem")
        if not self.static_h.is_hermitian(1e-10):
            raise SolverError("static Hamiltonian is not hermitian")
        if self.drive_h is not None:
            _same_space([self.drive_h], space, "MasterEquationProblem")
            if not self.drive_h.is_hermitian(1e-10):
                raise SolverError("drive Hamiltonian is not hermitian")

    @property
    def space(self) -> HilbertSpace:
        return self.static_h.space

    def segments(self, t_final: float) -> list[tuple[float, float]]:
        """Smooth integration windows covering [0, t_final]."""
        cuts = {0.0, t_final}
        if self.envelope is not None and self.drive_h is not None:
            cuts.update(b for b in self.envelope.breakpoints if 0.0 < b < t_final)
        edges = sorted(cuts)
        return list(zip(edges[:-1], edges[1:]))

    def envelope_value(self, t: float) -> float:
        if self.drive_h is None:
            return 0.0
        if self.envelope is None:
            return 1.0
        return self.envelope.envelope(t)

    def piecewise_constant(self) -> bool:
        return (
            self.drive_h is None
            or self.envelope is None
            or self.envelope.piecewise_constant
        )


@dataclass
class TrajectoryResult:
    """Sampled trajectory with optional time-integrated expectation values."""

    times: np.ndarray
    expectations: dict[str, np.ndarray]
    integrated_emission: dict[str, float]
    final_state: DensityMatrix
    method: str
    metrics: dict[str, float]
    states: list[DensityMatrix] | None = None


def _state_from_dense(space: HilbertSpace, mat: np.ndarray) -> DensityMatrix:
    """Hermitize, renormalize, and validate at the propagation tolerances."""
    m = 0.5 * (mat + mat.conj().T)
    tr = np.trace(m).real
    if not math.isfinite(tr) or tr == 0.0:
        raise SolverError(f"propagated state has trace {tr}")
    m = m / tr
    rho = DensityMatrix(space, sp.csr_matrix(m), validate=False)
    rho.validate(positivity_tol=1e-7)
    return rho


def _check_trace(
    times: np.ndarray, vecs: np.ndarray, d: int, trace_tol: float
) -> float:
    idx = np.arange(d) * d + np.arange(d)
    traces = vecs[:, idx].sum(axis=1)
    drift = np.abs(traces - 1.0)
    worst = float(drift.max()) if len(drift) else 0.0
    if worst > trace_tol:
        bad = int(np.argmax(drift > trace_tol))
        last_good = float(times[bad - 1]) if bad > 0 else 0.0
        raise SolverError(
            f"trace drifted by {worst:.3e} (tolerance {trace_tol:.1e})",
            last_good_time=last_good,
        )
    return worst


def _auto_sample_times(
    segments: list[tuple[float, float]], t_final: float, n_points: int
) -> np.ndarray:
    pieces = []
    for t0, t1 in segments:
        n = max(2, int(math.ceil((t1 - t0) / t_final * (n_points - 1))) + 1)
        pieces.append(np.linspace(t0, t1, n))
    times = np.unique(np.concatenate(pieces))
    return times


def evolve(
    problem: MasterEquationProblem,
    t_final: float,
    sample_times: Sequence[float] | None = None,
    *,
    observables: Mapping[str, OperatorMatrix] | None = None,
    integrate: Mapping[str, OperatorMatrix] | None = None,
    n_points: int = 101,
    method: str = "auto",
    rtol: float = 1e-8,
    atol: float = 1e-10,
    store_states: bool = False,
    trace_tol: float = TRACE_DRIFT_TOL,
) -> TrajectoryResult:
    """Propagate the problem's initial state for t_final microseconds.

    `observables` are sampled at the requested times (an automatic grid of
    roughly n_points when sample_times is None); `integrate` entries are
    returned in integrated_emission as integral_0^T Tr(O rho(t)) dt.
    """
    if t_final <= 0.0:
        raise ValueError("t_final must be positive")
    space = problem.space
    observables = dict(observables or {})
    integrate = dict(integrate or {})
    _same_space(observables.values(), space, "evolve observables")
    _same_space(integrate.values(), space, "evolve integrals")

    if method == "auto":
        method = "expm" if problem.piecewise_constant() else "rk45"
    if method not in ("expm", "rk45"):
        raise ValueError(f"unknown method {method!r}")
    if method == "expm" and not problem.piecewise_constant():
        raise SolverError(
            "expm integration requires a piecewise-constant envelope; use rk45"
        )

    segments = problem.segments(t_final)
    if sample_times is None:
        times = _auto_sample_times(segments, t_final, n_points)
    else:
        times = np.asarray(sample_times, dtype=float)
        if times.ndim != 1 or len(times) == 0:
            raise ValueError("sample_times must be a non-empty 1-d sequence")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("sample_times must be strictly increasing")
        if times[0] < 0.0 or times[-1] > t_final + 1e-12:
            raise ValueError("sample_times must lie within [0, t_final]")

    d = space.total_dim
    l_static = liouvillian(problem.static_h, list(problem.collapse_ops))
    l_drive = (
        hamiltonian_superoperator(problem.drive_h)
        if problem.drive_h is not None
        else None
    )
    int_names = list(integrate)
    quad_rows = _expectation_rows([integrate[k] for k in int_names])
    n_quad = len(int_names)

    sampled: list[tuple[float, np.ndarray]] = []
    y_state = problem.initial_state.matrix.toarray().reshape(-1).astype(complex)
    y_quad = np.zeros(n_quad, dtype=complex)
    if times[0] == 0.0:
        sampled.append((0.0, y_state.copy()))

    for t0, t1 in segments:
        mask = (times > t0 + 1e-15) & (times <= t1 + 1e-15)
        seg_samples = times[mask]
        if method == "expm":
            f = problem.envelope_value(0.5 * (t0 + t1))
            l_seg = (
                l_static
                if (l_drive is None or f == 0.0)
                else (l_static + f * l_drive).tocsr()
            )
            if n_quad:
                gen = sp.bmat(
                    [
                        [l_seg, sp.csr_matrix((d * d, n_quad), dtype=complex)],
                        [quad_rows, sp.csr_matrix((n_quad, n_quad), dtype=complex)],
                    ],
                    format="csr",
                )
                y = np.concatenate([y_state, y_quad])
            else:
                gen, y = l_seg, y_state
            stops = [t for t in seg_samples if t < t1 - 1e-15] + [t1]
            t_prev = t0
            for t_stop in stops:
                dt = t_stop - t_prev
                if dt > 0.0:
                    y = spla.expm_multiply((gen * dt).tocsr(), y)
                t_prev = t_stop
                if np.any(np.abs(seg_samples - t_stop) < 1e-15):
                    sampled.append((t_stop, y[: d * d].copy()))
            y_state = y[: d * d]
            if n_quad:
                y_quad = y[d * d :]
        else:
            def rhs(t: float, y: np.ndarray) -> np.ndarray:
                v = y[: d * d]
                dv = l_static @ v
                if l_drive is not None:
                    f_t = problem.envelope_value(t)
                    if f_t != 0.0:
                        dv = dv + f_t * (l_drive @ v)
                if n_quad:
                    return np.concatenate([dv, quad_rows @ v])
                return dv

            y0 = np.concatenate([y_state, y_quad]) if n_quad else y_state
            t_eval = np.concatenate([seg_samples, [t1]])
            t_eval = np.unique(np.clip(t_eval, t0, t1))
            sol = solve_ivp(
                rhs, (t0, t1), y0, method="RK45", t_eval=t_eval, rtol=rtol, atol=atol
            )
            if not sol.success:
                raise SolverError(
                    f"RK45 failed in segment [{t0}, {t1}]: {sol.message}",
                    last_good_time=float(sol.t[-1]) if len(sol.t) else t0,
                )
            for i, t in enumerate(sol.t):
                if np.any(np.abs(seg_samples - t) < 1e-12):
                    sampled.append((float(t), sol.y[: d * d, i].copy()))
            y_state = sol.y[: d * d, -1].copy()
            if n_quad:
                y_quad = sol.y[d * d :, -1]

    s_times = np.array([t for t, _ in sampled])
    vecs = np.vstack([v for _, v in sampled]) if sampled else np.empty((0, d * d))

    trace_drift = _check_trace(s_times, vecs, d, trace_tol)

    expectations: dict[str, np.ndarray] = {}
    max_imag = 0.0
    if observables:
        rows = _expectation_rows(list(observables.values()))
        values = (rows @ vecs.T).T
        max_imag = float(np.abs(values.imag).max()) if values.size else 0.0
        for k, name in enumerate(observables):
            expectations[name] = values[:, k].real

    final_mat = y_state.reshape(d, d)
    herm_defect = float(np.abs(final_mat - final_mat.conj().T).max())
    final_state = _state_from_dense(space, final_mat)

    metrics = {
        "trace_drift": trace_drift,
        "hermiticity_defect": herm_defect,
        "max_imag_expectation": max_imag,
        "segments": float(len(segments)),
    }
    if d <= _POSITIVITY_SAMPLE_MAX and len(vecs):
        min_eig = min(
            float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min())
            for m in (v.reshape(d, d) for v in vecs)
        )
        metrics["min_eigenvalue"] = min_eig

    states = None
    if store_states:
        states = [_state_from_dense(space, v.reshape(d, d)) for v in vecs]

    integrated = {name: float(y_quad[i].real) for i, name in enumerate(int_names)}
    return TrajectoryResult(
        times=s_times,
        expectations=expectations,
        integrated_emission=integrated,
        final_state=final_state,
        method=method,
        metrics=metrics,
        states=states,
    )


def evolve_batch(
    problems: Sequence[MasterEquationProblem],
    t_final: float,
    *,
    integrate: Mapping[str, OperatorMatrix],
    trace_tol: float = TRACE_DRIFT_TOL,
) -> list[dict[str, float]]:
    """Time-integrated expectations for many problems at once.

    All problems must live on the same space, share the same pulse
    segmentation, and be piecewise constant; the generators are stacked
    block-diagonally so the exponential propagation is amortized across the
    whole batch. Returns one {name: integral} dict per problem.
    """
    if not problems:
        return []
    space = problems[0].space
    for p in problems:
        if p.space != space:
            raise SpaceMismatchError("evolve_batch: problems live on different spaces")
        if not p.piecewise_constant():
            raise SolverError("evolve_batch requires piecewise-constant envelopes")

    d = space.total_dim
    n = len(problems)
    int_names = list(integrate)
    _same_space(integrate.values(), space, "evolve_batch integrals")
    quad_rows = _expectation_rows([integrate[k] for k in int_names])
    n_quad = len(int_names)

    segments = problems[0].segments(t_final)
    for p in problems[1:]:
        if p.segments(t_final) != segments:
            raise SolverError("evolve_batch: inconsistent pulse segmentation")

    block = d * d + n_quad
    y = np.concatenate(
        [
            np.concatenate(
                [
                    p.initial_state.matrix.toarray().reshape(-1).astype(complex),
                    np.zeros(n_quad, dtype=complex),
                ]
            )
            for p in problems
        ]
    )

    # The collapse set is usually shared across a scan; build its (expensive)
    # superoperator once when object identity shows the sharing.
    first_ops = problems[0].collapse_ops
    shared = all(
        len(p.collapse_ops) == len(first_ops)
        and all(a is b for a, b in zip(p.collapse_ops, first_ops))
        for p in problems
    )
    shared_disp = (
        dissipator_superoperator(list(first_ops)) if shared and first_ops else None
    )

    l_static: list[sp.csr_matrix] = []
    l_drive: list[sp.csr_matrix | None] = []
    for p in problems:
        gen = hamiltonian_superoperator(p.static_h)
        if shared_disp is not None:
            gen = (gen + shared_disp).tocsr()
        elif p.collapse_ops:
            gen = (gen + dissipator_superoperator(list(p.collapse_ops))).tocsr()
        l_static.append(gen)
        l_drive.append(
            hamiltonian_superoperator(p.drive_h) if p.drive_h is not None else None
        )

    zero_qq = sp.csr_matrix((n_quad, n_quad), dtype=complex)
    zero_vq = sp.csr_matrix((d * d, n_quad), dtype=complex)
    for t0, t1 in segments:
        mid = 0.5 * (t0 + t1)
        gens = []
        for k, p in enumerate(problems):
            f = p.envelope_value(mid)
            l_seg = l_static[k]
            if l_drive[k] is not None and f != 0.0:
                l_seg = (l_seg + f * l_drive[k]).tocsr()
            gens.append(
                sp.bmat([[l_seg, zero_vq], [quad_rows, zero_qq]], format="csr")
                if n_quad
                else l_seg
            )
        big = sp.block_diag(gens, format="csr")
        y = spla.expm_multiply(big, y, start=0.0, stop=t1 - t0, num=2, endpoint=True)[-1]

    results = []
    idx = np.arange(d) * d + np.arange(d)
    for k in range(n):
        chunk = y[k * block : (k + 1) * block]
        trace = chunk[idx].sum()
        if abs(trace - 1.0) > trace_tol:
            raise SolverError(
                f"evolve_batch: trace drifted by {abs(trace - 1.0):.3e} in problem {k}",
                last_good_time=0.0,
            )
        results.append(
            {name: float(chunk[d * d + i].real) for i, name in enumerate(int_names)}
        )
    return results


# ---------------------------------------------------------------------------
# Steady states
# ---------------------------------------------------------------------------

def _nullspace_dimension(gen: sp.csr_matrix) -> int:
    """Number of near-zero eigenvalues of the generator (-1 if undiagnosable)."""
    n = gen.shape[0]
    scale = float(np.abs(gen.data).max()) if gen.nnz else 1.0
    threshold = 1e-10 * max(scale, 1.0)
    if n <= _DENSE_NULLSPACE_MAX:
        eigenvalues = np.linalg.eigvals(gen.toarray())
    else:
        try:
            eigenvalues = spla.eigs(
                gen, k=min(6, n - 2), sigma=0.0, which="LM", return_eigenvectors=False
            )
        except Exception:
            return -1
    return int(np.sum(np.abs(eigenvalues) < threshold))


def _closed_system(gen: sp.csr_matrix, d: int) -> tuple[sp.csc_matrix, np.ndarray]:
    a = sp.vstack([_trace_row(d), gen[1:, :]], format="csc")
    b = np.zeros(d * d, dtype=complex)
    b[0] = 1.0
    return a, b


def _solve_direct(a: sp.csc_matrix, b: np.ndarray) -> np.ndarray | None:
    try:
        lu = spla.splu(a)
    except (RuntimeError, MemoryError):
        return None
    v = lu.solve(b)
    for _ in range(3):
        if not np.all(np.isfinite(v)):
            return None
        r = b - a @ v
        if np.linalg.norm(r) <= 1e-14 * np.linalg.norm(b):
            break
        v = v + lu.solve(r)
    return v if np.all(np.isfinite(v)) else None


def _solve_iterative(a: sp.csc_matrix, b: np.ndarray) -> np.ndarray | None:
    """LGMRES fallback for large systems; converged iff residual <= 1e-12*||b||."""
    try:
        ilu = spla.spilu(a, drop_tol=1e-6, fill_factor=20)
        precond = spla.LinearOperator(a.shape, ilu.solve)
    except (RuntimeError, MemoryError):
        precond = None
    v, info = spla.lgmres(a, b, M=precond, rtol=1e-12, atol=0.0, maxiter=2000)
    if info != 0 or not np.all(np.isfinite(v)):
        return None
    return v


def steady_state(
    hamiltonian: OperatorMatrix,
    collapse_ops: Sequence[OperatorMatrix],
    *,
    extra_collapse: Sequence[OperatorMatrix] = (),
    residual_tol: float = _RESIDUAL_TOL,
) -> DensityMatrix:
    """Unique solution of L rho = 0 with Tr rho = 1.

    The singular linear system is closed by replacing the first row of the
    generator with the trace functional and solved directly (sparse LU with
    iterative refinement); systems larger than 4096 unknowns fall back to
    preconditioned LGMRES if the factorization fails. The result is accepted
    only if ||L vec(rho)|| <= residual_tol * ||vec(rho)||; otherwise the null
    space of L is diagnosed and a degenerate kernel is reported with its
    dimension.
    """
    ops = list(collapse_ops) + list(extra_collapse)
    if not ops:
        raise ValueError("steady_state requires at least one collapse operator")
    gen = liouvillian(hamiltonian, ops)
    return _steady_state_from_generator(hamiltonian.space, gen, residual_tol)


def _steady_state_from_generator(
    space: HilbertSpace, gen: sp.csr_matrix, residual_tol: float = _RESIDUAL_TOL
) -> DensityMatrix:
    d = space.total_dim
    a, b = _closed_system(gen, d)
    v = _solve_direct(a, b)
    if v is None and d * d > _DIRECT_SOLVE_MAX:
        v = _solve_iterative(a, b)

    if v is not None:
        norm_v = np.linalg.norm(v)
        residual = np.linalg.norm(gen @ v)
        if norm_v > 0 and residual <= residual_tol * norm_v:
            return _state_from_dense(space, v.reshape(d, d))

    null_dim = _nullspace_dimension(gen)
    if null_dim != 1:
        raise DegenerateSteadyStateError(null_dim)
    raise SolverError(
        "steady-state solve did not reach the requested residual "
        f"({residual_tol:.1e}) despite a one-dimensional kernel"
    )
