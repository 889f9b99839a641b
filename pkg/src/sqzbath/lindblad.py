"""Lindblad master-equation engine: RHS, time evolution, steady states.

The right-hand side is applied in operator form (never building the d^2 x d^2
superoperator during evolution); the explicit vectorized Liouvillian is built
only for the dense steady-state solve at total dimension <= 64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import (
    ConvergenceError,
    InstabilityError,
    IntegrationError,
    ParameterError,
    ShapeError,
)
from .operators import DensityMatrix, HilbertSpace, Operator

DENSE_STEADY_MAX_DIM = 64
STEADY_TOL_DENSE = 1e-10
STEADY_TOL_MARCH = 1e-8


@dataclass
class LindbladTerm:
    """A dissipator D[jump] entering the master equation at the given rate."""

    jump: Operator
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ParameterError(f"Lindblad rate must be >= 0, got {self.rate}")


@dataclass
class MasterEquation:
    hamiltonian: Operator
    terms: list[LindbladTerm] = field(default_factory=list)

    def __post_init__(self):
        h = self.hamiltonian.matrix
        dev = np.abs(h - h.conj().T).max()
        if dev > 1e-10:
            raise ParameterError(f"Hamiltonian not Hermitian: deviation {dev:.3e}")
        dims = self.hamiltonian.space.mode_dims
        for t in self.terms:
            if t.jump.space.mode_dims != dims:
                raise ShapeError("all jump operators must share the Hamiltonian's space")

    @property
    def space(self) -> HilbertSpace:
        return self.hamiltonian.space

    def compiled(self, backend: str | None = None) -> _kernels.CompiledME:
        return _kernels.CompiledME(
            self.hamiltonian.matrix,
            [(t.jump.matrix, t.rate) for t in self.terms],
            backend=backend,
        )


@dataclass
class EvolveOptions:
    """Fixed-step (dt) or adaptive (rel_tol/abs_tol) integration options."""

    t_max: float
    dt: float | None = None
    rel_tol: float | None = None
    abs_tol: float | None = None
    record_stride: int = 1
    max_steps: int = 20_000_000

    def __post_init__(self):
        if self.t_max <= 0:
            raise ParameterError(f"t_max must be > 0, got {self.t_max}")
        fixed = self.dt is not None
        adaptive = self.rel_tol is not None or self.abs_tol is not None
        if fixed and adaptive:
            raise ParameterError("give either dt (fixed-step) or tolerances (adaptive), not both")
        if not fixed and not adaptive:
            raise ParameterError("EvolveOptions needs dt > 0 or tolerances > 0")
        if fixed and self.dt <= 0:
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if adaptive:
            if self.rel_tol is None:
                self.rel_tol = 1e-8
            if self.abs_tol is None:
                self.abs_tol = 1e-12
            if self.rel_tol <= 0 or self.abs_tol <= 0:
                raise ParameterError("tolerances must be > 0")
        if self.record_stride < 1:
            raise ParameterError("record_stride must be >= 1")

    @property
    def adaptive(self) -> bool:
        return self.dt is None


@dataclass
class TimeSeries:
    """Recorded expectation values (complex columns) and optional state snapshots."""

    times: np.ndarray
    values: dict[str, np.ndarray]
    states: list[np.ndarray] | None = None
    final_state: DensityMatrix | None = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("TimeSeries times must be strictly increasing")
        n = len(self.times)
        for name, col in self.values.items():
            if len(col) != n:
                raise ShapeError(f"column {name!r} length {len(col)} != {n} times")

    def column(self, name: str) -> np.ndarray:
        return self.values[name]


def rhs(me: MasterEquation, rho: Operator) -> Operator:
    """-i[H, rho] + sum_k rate_k (J rho J^dag - {J^dag J, rho}/2).

    Valid for any operator rho (no hermiticity assumed), so it doubles as the
    linear map used in property tests and residual checks.
    """
    if rho.space.mode_dims != me.space.mode_dims:
        raise ShapeError("rhs: state space does not match master equation")
    h = me.hamiltonian.matrix
    r = rho.matrix
    out = -1j * (h @ r - r @ h)
    for t in me.terms:
        j = t.jump.matrix
        jd = j.conj().T
        jdj = jd @ j
        out = out + t.rate * (j @ r @ jd - 0.5 * (jdj @ r + r @ jdj))
    return Operator(me.space, out)


def expectation(rho: Operator, op: Operator) -> complex:
    """Tr(rho op)."""
    if rho.space.mode_dims != op.space.mode_dims:
        raise ShapeError("expectation: spaces do not match")
    return complex(np.einsum("ij,ji->", rho.matrix, op.matrix))


def _evolve_fixed(cme, rho, opts, n_steps, dt_last):
    """Yield rho after each record interval of a fixed-step RK4 run."""
    stride = opts.record_stride
    if cme.backend == "numba":
        bufs = [np.empty_like(rho) for _ in range(6)]
        args = cme.csr_args()
        done = 0
        while done < n_steps:
            todo = min(stride, n_steps - done)
            if done + todo == n_steps and dt_last is not None and todo > 0:
                if todo > 1:
                    _kernels.rk4_chunk_csr(*args, rho, opts.dt, todo - 1, *bufs)
                _kernels.rk4_chunk_csr(*args, rho, dt_last, 1, *bufs)
            else:
                _kernels.rk4_chunk_csr(*args, rho, opts.dt, todo, *bufs)
            done += todo
            yield rho, done
    else:
        done = 0
        while done < n_steps:
            todo = min(stride, n_steps - done)
            if done + todo == n_steps and dt_last is not None and todo > 0:
                if todo > 1:
                    rho = _kernels.rk4_chunk_dense(cme, rho, opts.dt, todo - 1)
                rho = _kernels.rk4_chunk_dense(cme, rho, dt_last, 1)
            else:
                rho = _kernels.rk4_chunk_dense(cme, rho, opts.dt, todo)
            done += todo
            yield rho, done


def reduced_matrix(mat: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace on a raw matrix (dims = mode dimensions, keep = kept modes)."""
    n = len(dims)
    t = mat.reshape(tuple(dims) * 2)
    for k in sorted(set(range(n)) - set(keep), reverse=True):
        t = np.trace(t, axis1=k, axis2=k + t.ndim // 2)
    d = int(np.prod([dims[k] for k in keep]))
    return t.reshape(d, d)


def evolve(
    me: MasterEquation,
    rho0: DensityMatrix,
    opts: EvolveOptions,
    observables: Mapping[str, Operator] | Sequence[Operator] | None = None,
    record_states: bool | Sequence[int] = False,
    backend: str | None = None,
) -> TimeSeries:
    """Integrate the master equation, recording observable expectations.

    Fixed-step mode records every ``record_stride`` steps; adaptive mode
    records at ``record_stride`` equal subdivisions of ``t_max``.  The final
    state is validated against the DensityMatrix invariants.  When
    ``record_states`` is a sequence of mode indices, the stored snapshots are
    the reduced states over those modes (keeps memory bounded for big runs).
    """
    if rho0.space.mode_dims != me.space.mode_dims:
        raise ShapeError("evolve: initial state space does not match master equation")
    if observables is None:
        observables = {}
    if not isinstance(observables, Mapping):
        observables = {f"obs{i}": op for i, op in enumerate(observables)}
    obs_mats = {name: op.matrix for name, op in observables.items()}

    cme = me.compiled(backend=backend)
    rho = np.array(rho0.matrix, dtype=np.complex128, order="C")

    if record_states is False:
        snap = None
    elif record_states is True:
        snap = lambda m: m.copy()  # noqa: E731
    else:
        keep = list(record_states)
        dims = me.space.mode_dims
        snap = lambda m: reduced_matrix(m, dims, keep)  # noqa: E731

    times = [0.0]
    cols = {name: [complex(np.einsum("ij,ji->", rho, m))] for name, m in obs_mats.items()}
    snaps = [snap(rho)] if snap else None

    if not opts.adaptive:
        n_steps = int(np.floor(opts.t_max / opts.dt + 1e-12))
        rem = opts.t_max - n_steps * opts.dt
        dt_last = None
        if rem > 1e-12 * max(1.0, opts.t_max):
            n_steps += 1
            dt_last = rem
        if n_steps > opts.max_steps:
            raise IntegrationError(
                f"fixed-step run needs {n_steps} steps > max_steps={opts.max_steps}"
            )
        for rho, done in _evolve_fixed(cme, rho, opts, n_steps, dt_last):
            t = min(done * opts.dt, opts.t_max)
            times.append(t)
            for name, m in obs_mats.items():
                cols[name].append(complex(np.einsum("ij,ji->", rho, m)))
            if snap:
                snaps.append(snap(rho))
    else:
        n_rec = opts.record_stride
        rec_times = np.linspace(0.0, opts.t_max, n_rec + 1)[1:]
        t = 0.0
        dt = opts.t_max / 1000.0
        used = 0
        if cme.backend == "numba":
            d = cme.d
            ks = np.empty((7, d, d), dtype=np.complex128)
            tmp = np.empty((d, d), dtype=np.complex128)
            w = np.empty((d, d), dtype=np.complex128)
        for t_rec in rec_times:
            if cme.backend == "numba":
                t, dt, status, nst = _kernels.dopri_chunk_csr(
                    *cme.csr_args(), rho, t, t_rec, dt,
                    opts.rel_tol, opts.abs_tol, opts.max_steps - used, ks, tmp, w,
                )
            else:
                rho, t, dt, status, nst = _kernels.dopri_chunk_dense(
                    cme, rho, t, t_rec, dt, opts.rel_tol, opts.abs_tol,
                    opts.max_steps - used,
                )
            used += nst
            if status == 1:
                raise IntegrationError(
                    f"adaptive step size underflow at t={t:.6g} (dt={dt:.3e}); "
                    "the problem may be too stiff for the requested tolerances"
                )
            if status == 2:
                raise IntegrationError(f"non-finite values encountered at t={t:.6g}")
            if status == 3:
                raise IntegrationError(f"step budget exhausted at t={t:.6g} ({used} steps)")
            times.append(t_rec)
            for name, m in obs_mats.items():
                cols[name].append(complex(np.einsum("ij,ji->", rho, m)))
            if snap:
                snaps.append(snap(rho))

    tr_drift = abs(np.trace(rho).real - 1.0)
    if tr_drift > 1e-9:
        raise IntegrationError(f"trace drift {tr_drift:.3e} exceeds 1e-9 over the run")
    final = DensityMatrix(me.space, 0.5 * (rho + rho.conj().T))
    return TimeSeries(
        times=np.asarray(times),
        values={k: np.asarray(v) for k, v in cols.items()},
        states=snaps,
        final_state=final,
    )


def liouvillian_matrix(me: MasterEquation) -> np.ndarray:
    """Dense vectorized Liouvillian with row-major vec convention.

    vec(A X B) = (A kron B^T) vec(X); intended for total_dim <= 64.
    """
    h = me.hamiltonian.matrix
    d = h.shape[0]
    eye = np.eye(d)
    L = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for t in me.terms:
        j = t.jump.matrix
        jd = j.conj().T
        jdj = jd @ j
        L = L + t.rate * (
            np.kron(j, j.conj())
            - 0.5 * np.kron(jdj, eye)
            - 0.5 * np.kron(eye, jdj.T)
        )
    return L


def _steady_dense(me: MasterEquation) -> DensityMatrix:
    d = me.space.total_dim
    L = liouvillian_matrix(me)
    A = L.copy()
    trace_row = np.zeros(d * d, dtype=np.complex128)
    trace_row[:: d + 1] = 1.0
    A[0, :] = trace_row
    b = np.zeros(d * d, dtype=np.complex128)
    b[0] = 1.0
    lu = scipy.linalg.lu_factor(A)
    x = scipy.linalg.lu_solve(lu, b)
    for _ in range(2):  # iterative refinement against ill-conditioning
        x = x + scipy.linalg.lu_solve(lu, b - A @ x)
    rho = x.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    resid = float(np.abs(L @ rho.reshape(-1)).max())
    if resid > STEADY_TOL_DENSE:
        raise ConvergenceError(
            f"dense steady-state residual {resid:.3e} > {STEADY_TOL_DENSE} "
            "(Liouvillian may be too ill-conditioned or null space degenerate)"
        )
    return DensityMatrix(me.space, rho)


def _steady_march(me, rho0, opts, backend):
    cme = me.compiled(backend=backend)
    d = cme.d
    if rho0 is not None:
        rho = np.array(rho0.matrix, dtype=np.complex128, order="C")
    else:
        rho = np.eye(d, dtype=np.complex128) / d
    dt = cme.stability_interval()
    if not np.isfinite(dt):
        raise ConvergenceError("steady_state: closed system has no unique steady state")
    max_steps = opts.max_steps if opts is not None else 4_000_000
    chunk = max(200, int(round(min(25.0 / dt, 20000))))
    bufs = [np.empty_like(rho) for _ in range(6)]
    done = 0
    resid_prev = np.inf
    stall = 0
    while done < max_steps:
        todo = min(chunk, max_steps - done)
        if cme.backend == "numba":
            _kernels.rk4_chunk_csr(*cme.csr_args(), rho, dt, todo, *bufs)
        else:
            rho = _kernels.rk4_chunk_dense(cme, rho, dt, todo)
        done += todo
        amax = float(np.abs(rho).max())
        trdev = abs(np.trace(rho).real - 1.0)
        if not np.isfinite(amax) or amax > 10.0 or trdev > 1e-6:
            raise InstabilityError(
                f"steady_state march diverging after {done} steps "
                f"(max|rho|={amax:.3g}, trace drift={trdev:.3e}); "
                "the model is likely dynamically unstable"
            )
        resid = float(np.abs(cme.rhs_hermitian(rho)).max())
        if resid < STEADY_TOL_MARCH:
            rho = 0.5 * (rho + rho.conj().T)
            rho /= np.trace(rho).real
            return DensityMatrix(me.space, rho)
        stall = stall + 1 if resid > 0.999 * resid_prev else 0
        resid_prev = resid
        if stall >= 25:
            raise ConvergenceError(
                f"steady_state march stalled at residual {resid:.3e} "
                f"after {done} steps (dt={dt:.3e})"
            )
    raise ConvergenceError(
        f"steady_state march exhausted {max_steps} steps at residual {resid_prev:.3e}"
    )


def steady_state(
    me: MasterEquation,
    opts: EvolveOptions | None = None,
    rho0: DensityMatrix | None = None,
    backend: str | None = None,
    method: str = "auto",
) -> DensityMatrix:
    """Steady state of the master equation.

    Dense vectorized-Liouvillian null-space solve for total dimension <= 64
    (residual < 1e-10); otherwise long-time integration from ``rho0`` (or the
    maximally mixed state) until max|d rho/dt| < 1e-8.  Uniqueness is checked
    a posteriori through the residual, not proven.
    """
    d = me.space.total_dim
    if method == "dense" or (method == "auto" and d <= DENSE_STEADY_MAX_DIM):
        return _steady_dense(me)
    return _steady_march(me, rho0, opts, backend)
