"""Operators and states on truncated tensor-product Hilbert spaces.

Conventions used throughout the package:

* mode ordering: system mode first, bath mode second;
* qubit basis: index 0 is the excited state, so ``sigma_z = diag(1, -1)``
  and ``sigma_minus = |g><e|`` lowers the sigma_z eigenvalue;
* quadratures: ``X_phi = a e^{-i phi} + a^dag e^{i phi}`` (vacuum variance 1);
* squeeze operator: ``S_xi = expm((conj(xi) a^2 - xi a^dag^2)/2)`` so that
  ``S_xi^dag a S_xi = cosh(r) a - e^{i theta} sinh(r) a^dag`` for
  ``xi = r e^{i theta}``.

A squeezed thermal state here means the state whose fluctuations are
*enhanced* by e^{r} along the angle theta/2 and reduced by e^{-r} along
theta/2 + pi/2; with the squeeze-operator convention above that state is
``S_xi^dag rho_thermal S_xi``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, ParameterError, ShapeError

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9


@dataclass(frozen=True)
class HilbertSpace:
    """Tensor product of truncated modes; ``mode_dims[k]`` is the k-th mode dimension."""

    mode_dims: tuple[int, ...]

    def __init__(self, mode_dims: Iterable[int]):
        dims = tuple(int(d) for d in mode_dims)
        if not dims:
            raise DimensionError("a Hilbert space needs at least one mode")
        for d in dims:
            if d < 2:
                raise DimensionError(f"every mode dimension must be >= 2, got {d}")
        object.__setattr__(self, "mode_dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.mode_dims))

    @property
    def n_modes(self) -> int:
        return len(self.mode_dims)


@dataclass
class Operator:
    """Dense complex matrix together with the space it acts on.

    The matrix is made read-only after construction; operators can be shared
    freely across threads.
    """

    space: HilbertSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        d = self.space.total_dim
        if m.shape != (d, d):
            raise ShapeError(f"matrix shape {m.shape} does not match space dim {d}")
        m.setflags(write=False)
        self.matrix = m

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix @ other.matrix)

    def __add__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.matrix)

    def _check_space(self, other: "Operator") -> None:
        if self.space.mode_dims != other.space.mode_dims:
            raise ShapeError(
                f"space mismatch: {self.space.mode_dims} vs {other.space.mode_dims}"
            )


class DensityMatrix(Operator):
    """Hermitian, unit-trace, positive-semidefinite operator.

    Invariants are checked at construction: hermiticity to 1e-10 (max
    elementwise deviation), trace 1 to 1e-9 and minimum eigenvalue >= -1e-9.
    """

    def __post_init__(self):
        super().__post_init__()
        m = self.matrix
        herm_dev = np.abs(m - m.conj().T).max()
        if herm_dev > HERMITICITY_TOL:
            raise ParameterError(f"density matrix not Hermitian: deviation {herm_dev:.3e}")
        tr = np.trace(m)
        if abs(tr - 1.0) > TRACE_TOL:
            raise ParameterError(f"density matrix trace {tr:.12g} != 1")
        w = np.linalg.eigvalsh(m)
        if w[0] < -POSITIVITY_TOL:
            raise ParameterError(f"density matrix has eigenvalue {w[0]:.3e} < -{POSITIVITY_TOL}")


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def density_matrix(space: HilbertSpace, matrix: np.ndarray) -> DensityMatrix:
    """Build a DensityMatrix, re-hermitizing and renormalizing the trace first."""
    m = _hermitize(np.asarray(matrix, dtype=np.complex128))
    m = m / np.trace(m).real
    return DensityMatrix(space, m)


def annihilation(dim: int) -> Operator:
    """Truncated bosonic annihilation operator: <n-1|a|n> = sqrt(n)."""
    if dim < 2:
        raise DimensionError(f"annihilation needs dim >= 2, got {dim}")
    m = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(np.complex128)
    return Operator(HilbertSpace((dim,)), m)


def number_operator(dim: int) -> Operator:
    a = annihilation(dim)
    return a.dag() @ a


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "plus": np.array([[0, 1], [0, 0]], dtype=np.complex128),
    "minus": np.array([[0, 0], [1, 0]], dtype=np.complex128),
}


def pauli(which: str) -> Operator:
    """Pauli / ladder operator on a qubit; ``minus`` is |g><e| (basis |e>, |g>)."""
    try:
        m = _PAULI[which]
    except KeyError:
        raise ParameterError(f"unknown Pauli label {which!r}; use x/y/z/plus/minus") from None
    return Operator(HilbertSpace((2,)), m.copy())


def identity(space: HilbertSpace) -> Operator:
    return Operator(space, np.eye(space.total_dim, dtype=np.complex128))


def embed(op: Operator, space: HilbertSpace, slot: int) -> Operator:
    """Embed a single-mode operator into ``space`` at mode index ``slot``.

    Identity on all other modes; Kronecker factors follow mode_dims order.
    """
    if not 0 <= slot < space.n_modes:
        raise ShapeError(f"slot {slot} out of range for {space.n_modes} modes")
    if op.space.n_modes != 1 or op.space.mode_dims[0] != space.mode_dims[slot]:
        raise ShapeError(
            f"operator dim {op.space.mode_dims} does not match mode {slot} "
            f"of {space.mode_dims}"
        )
    m = np.array([[1.0 + 0j]])
    for k, d in enumerate(space.mode_dims):
        factor = op.matrix if k == slot else np.eye(d, dtype=np.complex128)
        m = np.kron(m, factor)
    return Operator(space, m)


def squeeze_operator(dim: int, xi: complex) -> Operator:
    """Single-mode squeeze operator S_xi = expm((conj(xi) a^2 - xi a^dag^2)/2).

    Warns when exp(2|xi|) > dim/4, i.e. when the Bogoliubov stretch starts to
    push population into the truncation edge.
    """
    if dim < 2:
        raise DimensionError(f"squeeze_operator needs dim >= 2, got {dim}")
    xi = complex(xi)
    if np.exp(2 * abs(xi)) > dim / 4:
        warnings.warn(
            f"squeeze_operator: exp(2|xi|)={np.exp(2 * abs(xi)):.3g} exceeds dim/4={dim / 4:.3g}; "
            "matrix exponential is truncation-stressed",
            stacklevel=2,
        )
    a = annihilation(dim).matrix
    gen = 0.5 * (np.conj(xi) * (a @ a) - xi * (a.conj().T @ a.conj().T))
    return Operator(HilbertSpace((dim,)), expm(gen))


def thermal_state(dim: int, nbar: float) -> DensityMatrix:
    """Thermal state, p_n proportional to (nbar/(nbar+1))^n, renormalized after truncation."""
    if dim < 2:
        raise DimensionError(f"thermal_state needs dim >= 2, got {dim}")
    if nbar < 0:
        raise ParameterError(f"thermal_state needs nbar >= 0, got {nbar}")
    if nbar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
    else:
        p = (nbar / (nbar + 1.0)) ** np.arange(dim)
        p /= p.sum()
    return DensityMatrix(HilbertSpace((dim,)), np.diag(p).astype(np.complex128))


def squeezed_thermal_state(dim: int, nbar: float, xi: complex) -> DensityMatrix:
    """Squeezed thermal state with Delta X_{theta/2} = sqrt(2 nbar + 1) e^{r}.

    Constructed as S_xi^dag rho_thermal S_xi, which with this package's squeeze
    convention puts the *enhanced* fluctuations along theta/2 and the reduced
    ones along theta/2 + pi/2.
    """
    rho = thermal_state(dim, nbar)
    if xi == 0:
        return rho
    s = squeeze_operator(dim, xi).matrix
    m = s.conj().T @ rho.matrix @ s
    return density_matrix(rho.space, m)


def partial_trace(rho: Operator, keep: Sequence[int]) -> Operator:
    """Trace out all modes not listed in ``keep`` (order preserved, trace preserved).

    Returns a DensityMatrix when given one, otherwise a plain Operator (the map
    is linear, so it is also useful on non-state operators).
    """
    keep = list(keep)
    dims = rho.space.mode_dims
    n = len(dims)
    if not keep:
        raise ShapeError("partial_trace: keep must be non-empty")
    if any(not 0 <= k < n for k in keep) or len(set(keep)) != len(keep):
        raise ShapeError(f"partial_trace: invalid keep={keep} for {n} modes")
    traced = [k for k in range(n) if k not in keep]
    t = rho.matrix.reshape(dims + dims)
    for k in sorted(traced, reverse=True):
        # axes shift as earlier modes are traced out; trace highest index first
        t = np.trace(t, axis1=k, axis2=k + t.ndim // 2)
    kept_dims = tuple(dims[k] for k in sorted(keep))
    d = int(np.prod(kept_dims))
    m = t.reshape(d, d)
    if sorted(keep) != keep:
        # reorder kept modes to the requested order
        order = np.argsort(np.argsort(keep))
        perm = list(order) + [len(keep) + i for i in order]
        m = m.reshape(kept_dims + kept_dims).transpose(perm).reshape(d, d)
        kept_dims = tuple(dims[k] for k in keep)
    cls = DensityMatrix if isinstance(rho, DensityMatrix) else Operator
    return cls(HilbertSpace(kept_dims), m)


def quadrature_operator(dim: int, phi: float) -> Operator:
    """Quadrature X_phi = a e^{-i phi} + a^dag e^{i phi}; vacuum variance is 1."""
    a = annihilation(dim).matrix
    m = a * np.exp(-1j * phi) + a.conj().T * np.exp(1j * phi)
    return Operator(HilbertSpace((dim,)), m)


def top_level_population(rho: Operator, levels: int = 2) -> tuple[float, ...]:
    """Max population among the top ``levels`` Fock states, per mode.

    Used to monitor truncation adequacy; anything above ~1e-6 means the
    cutoff is being felt.
    """
    dims = rho.space.mode_dims
    out = []
    for k, d in enumerate(dims):
        red = partial_trace(rho, [k]) if len(dims) > 1 else rho
        p = np.real(np.diag(red.matrix))
        out.append(float(p[max(0, d - levels):].max()))
    return tuple(out)
