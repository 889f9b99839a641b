"""State analysis: Wigner functions, quadrature statistics, squeezed-thermal
and decay-rate fits, and state distances."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConsistencyError, ParameterError, ShapeError, UnfittableError
from .lindblad import TimeSeries, expectation
from .operators import (
    DensityMatrix,
    Operator,
    quadrature_operator,
    squeezed_thermal_state,
    top_level_population,
)

TRUNCATION_WARN = 1e-4


@dataclass
class WignerGrid:
    """W(alpha) sampled on a uniform square grid in the complex plane."""

    re_alpha: np.ndarray
    im_alpha: np.ndarray
    values: np.ndarray  # shape (len(im_alpha), len(re_alpha))
    warnings: list[str]

    def integral(self) -> float:
        da = (self.re_alpha[1] - self.re_alpha[0]) * (self.im_alpha[1] - self.im_alpha[0])
        return float(self.values.sum() * da)


@dataclass
class SqueezedThermalFit:
    """Gaussian (second-moment) fit of a single-mode state."""

    r: float
    theta: float
    nbar: float
    fidelity: float

    @property
    def xi(self) -> complex:
        return self.r * np.exp(1j * self.theta)


@dataclass
class DecayFit:
    rate: float
    amplitude: float
    r_squared: float


def wigner(rho: DensityMatrix, half_width: float, points: int) -> WignerGrid:
    """Displaced-parity Wigner function W(a) = (2/pi) Tr[rho D(a) P D(a)^dag].

    Exact at the state's truncation (displacement matrix elements evaluated by
    Laguerre recurrences); normalized so that the full-plane integral is 1.
    """
    if rho.space.n_modes != 1:
        raise ShapeError("wigner: single-mode states only")
    if points < 32:
        raise ParameterError(f"wigner needs points >= 32, got {points}")
    ax = np.linspace(-half_width, half_width, points)
    values = _kernels.wigner_grid(np.asarray(rho.matrix), ax, ax)
    warns = []
    top = top_level_population(rho)[0]
    if top > TRUNCATION_WARN:
        warns.append(
            f"top Fock-level population {top:.3e} > {TRUNCATION_WARN}; "
            "Wigner values are truncation-stressed"
        )
        warnings.warn(warns[-1], stacklevel=2)
    return WignerGrid(re_alpha=ax, im_alpha=ax.copy(), values=values, warnings=warns)


def covariance(rho: DensityMatrix) -> np.ndarray:
    """2x2 symmetrized covariance of (X_0, X_{pi/2}); vacuum gives the identity."""
    if rho.space.n_modes != 1:
        raise ShapeError("covariance: single-mode states only")
    dim = rho.space.mode_dims[0]
    x0 = quadrature_operator(dim, 0.0).matrix
    x1 = quadrature_operator(dim, np.pi / 2).matrix
    m = rho.matrix
    means = [np.einsum("ij,ji->", m, o).real for o in (x0, x1)]
    v = np.empty((2, 2))
    for i, oi in enumerate((x0, x1)):
        for j, oj in enumerate((x0, x1)):
            sym = 0.5 * np.einsum("ij,ji->", m, oi @ oj + oj @ oi).real
            v[i, j] = sym - means[i] * means[j]
    return v


def quadrature_variance(rho: DensityMatrix, phi: float) -> float:
    """Standard deviation of X_phi = a e^{-i phi} + a^dag e^{i phi}."""
    if rho.space.n_modes != 1:
        raise ShapeError("quadrature_variance: single-mode states only")
    dim = rho.space.mode_dims[0]
    x = quadrature_operator(dim, phi)
    mean = expectation(rho, x).real
    second = expectation(rho, x @ x).real
    return float(np.sqrt(max(second - mean**2, 0.0)))


def fit_squeezed_thermal(rho: DensityMatrix) -> SqueezedThermalFit:
    """Fit (xi, nbar) from the covariance eigensystem and report the fidelity.

    The principal axis with the *larger* variance sits at theta/2; r is a
    quarter of the log eigenvalue ratio and nbar comes from the symplectic
    purity sqrt(v+ v-).  The fidelity against the reconstructed squeezed
    thermal state quantifies any non-Gaussian residue.
    """
    v = covariance(rho)
    ev, evec = np.linalg.eigh(v)
    if ev[0] <= 0:
        raise ConsistencyError(f"covariance not positive definite: eigenvalues {ev}")
    v_minus, v_plus = float(ev[0]), float(ev[1])
    r = 0.25 * np.log(v_plus / v_minus)
    nbar = max(0.0, 0.5 * (np.sqrt(v_plus * v_minus) - 1.0))
    major = evec[:, 1]
    theta = 2.0 * np.arctan2(major[1], major[0])
    dim = rho.space.mode_dims[0]
    recon = squeezed_thermal_state(dim, nbar, r * np.exp(1j * theta))
    return SqueezedThermalFit(r=r, theta=theta % (2 * np.pi), nbar=nbar,
                              fidelity=fidelity(rho, recon))


def fit_decay_rate(
    ts: TimeSeries,
    column: str,
    window: tuple[float, float] | None = None,
) -> DecayFit:
    """Least-squares slope of ln|value| against t; rate = -slope.

    Default window: from the series start until the signal falls to 5% of its
    initial magnitude, or the series end, whichever comes first.
    """
    t = np.asarray(ts.times, dtype=float)
    y = ts.values[column]
    if np.abs(np.imag(y)).max() > 1e-8:
        raise UnfittableError(f"column {column!r} is not real (max imag {np.abs(np.imag(y)).max():.2e})")
    y = np.real(y)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if len(y) < 3:
        raise UnfittableError("window contains fewer than 3 samples")
    below = np.where(np.abs(y) < 0.05 * abs(y[0]))[0]
    if window is None and len(below):
        t, y = t[: below[0]], y[: below[0]]
    if len(y) < 3:
        raise UnfittableError("decay window too short after the 5% cutoff")
    if np.any(np.abs(y) < 1e-12):
        raise UnfittableError("values below 1e-12 in the fit window")
    if np.any(np.sign(y) != np.sign(y[0])):
        raise UnfittableError("sign changes inside the fit window")
    logy = np.log(np.abs(y))
    a = np.vstack([t, np.ones_like(t)]).T
    (slope, intercept), res, *_ = np.linalg.lstsq(a, logy, rcond=None)
    ss_res = float(res[0]) if len(res) else float(np.sum((logy - a @ [slope, intercept]) ** 2))
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    if ss_tot < 1e-28:
        r2 = 1.0 if ss_res < 1e-20 else 0.0
    else:
        r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return DecayFit(rate=float(-slope), amplitude=float(np.exp(intercept)), r_squared=r2)


def trace_distance(rho1: Operator, rho2: Operator) -> float:
    """T = ||rho1 - rho2||_1 / 2 via the eigenvalues of the Hermitian difference."""
    if rho1.space.mode_dims != rho2.space.mode_dims:
        raise ShapeError("trace_distance: spaces do not match")
    diff = rho1.matrix - rho2.matrix
    dev = np.abs(diff - diff.conj().T).max()
    if dev > 1e-8:
        sv = np.linalg.svd(diff, compute_uv=False)
        return float(0.5 * sv.sum())
    w = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(0.5 * np.abs(w).sum())


def fidelity(rho1: Operator, rho2: Operator) -> float:
    """Uhlmann fidelity F = Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)), in [0, 1]."""
    if rho1.space.mode_dims != rho2.space.mode_dims:
        raise ShapeError("fidelity: spaces do not match")
    w, u = np.linalg.eigh(rho1.matrix)
    w = np.clip(w, 0.0, None)
    sqrt1 = (u * np.sqrt(w)) @ u.conj().T
    m = sqrt1 @ rho2.matrix @ sqrt1
    ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    ev = np.clip(ev, 0.0, None)
    return float(min(1.0, np.sqrt(ev).sum()))
