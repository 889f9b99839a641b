"""Closed-form effective-model machinery for the engineered squeezed reservoir.

A system mode (qubit or boson) couples bilinearly to a lossy bath mode inside
a normal thermal environment.  Adiabatic elimination of the bath mode yields
dissipators with Bogoliubov-rotated jump operators; the functions here give
the squeezing parameter, effective rate and frequency shifts, Bloch rates,
inverse design helpers, and builders for both the full two-mode and the
effective single-mode master equations.

All formulas are expressed through

    D-^2 = (omega_b - omega_s)^2 + kappa^2/4
    D+^2 = (omega_b + omega_s)^2 + kappa^2/4

which avoids the sinh(2r)^2 overflow of the textbook form of gamma_eff.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ConsistencyError,
    DegenerateParametersError,
    NoSolutionError,
    ParameterError,
)
from .lindblad import LindbladTerm, MasterEquation
from .operators import (
    HilbertSpace,
    Operator,
    annihilation,
    embed,
    pauli,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the system+bath model (hbar = 1, angular units)."""

    omega_s: float
    omega_b: float
    g: float
    kappa: float
    nbar: float = 0.0
    phi_s: float = 0.0
    phi_b: float = 0.0
    system_kind: Literal["qubit", "boson"] = "boson"

    def __post_init__(self):
        for name in ("omega_s", "omega_b", "g", "kappa"):
            v = getattr(self, name)
            if v <= 0:
                raise ParameterError(f"{name} must be > 0, got {v}")
        if self.nbar < 0:
            raise ParameterError(f"nbar must be >= 0, got {self.nbar}")
        if self.system_kind not in ("qubit", "boson"):
            raise ParameterError(f"unknown system_kind {self.system_kind!r}")
        object.__setattr__(self, "phi_s", float(self.phi_s) % TWO_PI)
        object.__setattr__(self, "phi_b", float(self.phi_b) % TWO_PI)

    @property
    def d_minus_sq(self) -> float:
        return (self.omega_b - self.omega_s) ** 2 + self.kappa**2 / 4

    @property
    def d_plus_sq(self) -> float:
        return (self.omega_b + self.omega_s) ** 2 + self.kappa**2 / 4


@dataclass(frozen=True)
class SqueezeParams:
    """Squeezing parameter xi = r e^{i theta} of the engineered reservoir."""

    r: float
    theta: float

    def __post_init__(self):
        if self.r < 0:
            raise ParameterError(f"squeezing strength r must be >= 0, got {self.r}")
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    @property
    def xi(self) -> complex:
        return self.r * np.exp(1j * self.theta)


@dataclass(frozen=True)
class BlochRates:
    gamma_x: float
    gamma_y: float
    gamma_z: float
    drive_z: float  # constant term in d<sz>/dt


@dataclass(frozen=True)
class RegimeFlags:
    off_resonant: bool  # |omega_b - omega_s| >= 10 g
    bad_cavity: bool    # kappa >= 10 g
    stable: bool        # omega_eff > |Lambda| (bosons; True for qubits)

    @property
    def adiabatic_ok(self) -> bool:
        return self.off_resonant or self.bad_cavity


@dataclass(frozen=True)
class EffectiveModel:
    """Derived effective-model quantities for one parameter set."""

    params: PhysicalParams
    squeeze: SqueezeParams
    gamma_eff: float
    omega_eff: float
    lam: complex  # single-mode squeezing interaction strength (0 for qubits)
    regime: RegimeFlags
    bloch: BlochRates | None = None

    def warnings(self) -> list[str]:
        out = []
        if not self.regime.adiabatic_ok:
            out.append(
                "adiabatic-elimination regime stressed: neither |omega_b-omega_s| "
                f">= 10 g ({abs(self.params.omega_b - self.params.omega_s):.4g} vs "
                f"{10 * self.params.g:.4g}) nor kappa >= 10 g "
                f"({self.params.kappa:.4g} vs {10 * self.params.g:.4g})"
            )
        if self.params.system_kind == "boson" and not self.regime.stable:
            out.append(
                f"effective quadratic Hamiltonian not diagonalizable: omega_eff="
                f"{self.omega_eff:.6g} <= |Lambda|={abs(self.lam):.6g}; steady-state "
                "evaluation will be refused"
            )
        return out


def squeeze_params(p: PhysicalParams) -> SqueezeParams:
    """Reservoir squeezing strength and angle from the physical parameters."""
    r = np.arctanh(np.sqrt(p.d_minus_sq / p.d_plus_sq))
    num = p.omega_b - p.omega_s - 0.5j * p.kappa
    den = p.omega_b + p.omega_s - 0.5j * p.kappa
    theta = 2 * p.phi_s + np.pi + np.angle(num / den)
    return SqueezeParams(r=r, theta=theta)


def effective_rate(p: PhysicalParams) -> float:
    """Effective system dissipation rate gamma_eff = g^2 kappa/(w_s w_b sinh^2 2r).

    Evaluated as 4 g^2 kappa w_s w_b / (D-^2 D+^2), which is algebraically
    identical and immune to sinh overflow at large r.
    """
    if p.omega_b == p.omega_s and p.kappa == 0:
        raise DegenerateParametersError("gamma_eff degenerates at omega_b == omega_s, kappa == 0")
    return 4 * p.g**2 * p.kappa * p.omega_s * p.omega_b / (p.d_minus_sq * p.d_plus_sq)


def effective_jump_coefficients(p: PhysicalParams) -> tuple[complex, complex]:
    """Normalized Bogoliubov amplitudes (mu, nu) of the effective jump mu*s + nu*s^dag.

    The raw second-order amplitudes are
    A1 = -g sqrt(kappa) e^{-i phi_s}/(omega_b - omega_s - i kappa/2) and
    A2 = -g sqrt(kappa) e^{+i phi_s}/(omega_b + omega_s - i kappa/2); the global
    phase is fixed by making mu real positive, after which
    |mu|^2 - |nu|^2 = 1, mu = cosh r and nu = -e^{i theta} sinh r.
    """
    a1 = -p.g * np.sqrt(p.kappa) * np.exp(-1j * p.phi_s) / (p.omega_b - p.omega_s - 0.5j * p.kappa)
    a2 = -p.g * np.sqrt(p.kappa) * np.exp(1j * p.phi_s) / (p.omega_b + p.omega_s - 0.5j * p.kappa)
    if abs(a1) <= abs(a2):
        raise ConsistencyError(
            "effective jump amplitudes violate |A1| > |A2|; cannot normalize"
        )
    norm = np.sqrt(abs(a1) ** 2 - abs(a2) ** 2)
    phase = a1 / abs(a1)
    return abs(a1) / norm + 0j, a2 * np.conj(phase) / norm


def _regime(p: PhysicalParams, omega_eff: float, lam: complex) -> RegimeFlags:
    return RegimeFlags(
        off_resonant=abs(p.omega_b - p.omega_s) >= 10 * p.g,
        bad_cavity=p.kappa >= 10 * p.g,
        stable=(omega_eff > abs(lam)) if p.system_kind == "boson" else True,
    )


def bloch_rates(gamma_eff: float, nbar: float, r: float) -> BlochRates:
    """Transverse/longitudinal qubit rates for theta = pi and omega_eff = 0.

    gamma_x = (gamma_eff/2)(2 nbar + 1) e^{-2r} (extended lifetime axis),
    gamma_y the conjugate, gamma_z = gamma_eff (2 nbar + 1) cosh 2r, plus the
    constant -gamma_eff drive in d<sz>/dt.
    """
    therm = 0.5 * gamma_eff * (2 * nbar + 1)
    return BlochRates(
        gamma_x=therm * np.exp(-2 * r),
        gamma_y=therm * np.exp(2 * r),
        gamma_z=2 * therm * np.cosh(2 * r),
        drive_z=-gamma_eff,
    )


def rabi_effective_model(p: PhysicalParams) -> EffectiveModel:
    """Effective qubit model: shifted frequency, squeezed dissipators, Bloch rates."""
    if p.system_kind != "qubit":
        raise ParameterError("rabi_effective_model needs system_kind='qubit'")
    sq = squeeze_params(p)
    geff = effective_rate(p)
    shift = geff * (2 * p.nbar + 1) * (p.omega_b**2 - p.omega_s**2 - p.kappa**2 / 4) / (
        2 * p.kappa * p.omega_b
    )
    omega_eff = p.omega_s - shift
    return EffectiveModel(
        params=p,
        squeeze=sq,
        gamma_eff=geff,
        omega_eff=omega_eff,
        lam=0j,
        regime=_regime(p, omega_eff, 0j),
        bloch=bloch_rates(geff, p.nbar, sq.r),
    )


def bosonic_effective_model(p: PhysicalParams) -> EffectiveModel:
    """Effective cavity model: shifted frequency and squeezing interaction Lambda."""
    if p.system_kind != "boson":
        raise ParameterError("bosonic_effective_model needs system_kind='boson'")
    sq = squeeze_params(p)
    geff = effective_rate(p)
    omega_eff = p.omega_s - geff * (p.omega_b**2 - p.omega_s**2 + p.kappa**2 / 4) / (
        2 * p.kappa * p.omega_s
    )
    lam = 1j * p.g**2 * (
        1.0 / (p.omega_b - p.omega_s + 0.5j * p.kappa)
        + 1.0 / (p.omega_b + p.omega_s - 0.5j * p.kappa)
    )
    # the phases rotate the quadratic interaction like the jump operators
    lam = lam * np.exp(2j * p.phi_s)
    return EffectiveModel(
        params=p,
        squeeze=sq,
        gamma_eff=geff,
        omega_eff=omega_eff,
        lam=lam,
        regime=_regime(p, omega_eff, lam),
    )


def effective_model(p: PhysicalParams) -> EffectiveModel:
    return rabi_effective_model(p) if p.system_kind == "qubit" else bosonic_effective_model(p)


def build_full_model(p: PhysicalParams, trunc_system: int, trunc_bath: int) -> MasterEquation:
    """Full two-mode master equation: bilinear coupling, thermally damped bath.

    H = w_s s^dag s + w_b b^dag b
        + g (s e^{-i phi_s} + s^dag e^{i phi_s})(b e^{-i phi_b} + b^dag e^{i phi_b}),
    jumps b at (nbar+1) kappa and b^dag at nbar kappa.  The system operator s
    is sigma_minus for a qubit, a truncated annihilation operator otherwise.
    """
    if p.system_kind == "qubit":
        dims = (2, trunc_bath)
        s_local = pauli("minus")
    else:
        dims = (trunc_system, trunc_bath)
        s_local = annihilation(trunc_system)
    space = HilbertSpace(dims)
    s = embed(s_local, space, 0)
    b = embed(annihilation(trunc_bath), space, 1)
    sd, bd = s.dag(), b.dag()
    coupling = (np.exp(-1j * p.phi_s) * s + np.exp(1j * p.phi_s) * sd) @ (
        np.exp(-1j * p.phi_b) * b + np.exp(1j * p.phi_b) * bd
    )
    h = p.omega_s * (sd @ s) + p.omega_b * (bd @ b) + p.g * coupling
    terms = [LindbladTerm(b, (p.nbar + 1) * p.kappa)]
    if p.nbar > 0:
        terms.append(LindbladTerm(bd, p.nbar * p.kappa))
    return MasterEquation(hamiltonian=h, terms=terms)


def squeezed_jump(base: Operator, sq: SqueezeParams) -> Operator:
    """Bogoliubov-rotated jump cosh(r) s - e^{i theta} sinh(r) s^dag."""
    return np.cosh(sq.r) * base - np.exp(1j * sq.theta) * np.sinh(sq.r) * base.dag()


def build_effective_model(em: EffectiveModel, trunc: int = 2) -> MasterEquation:
    """Effective single-mode master equation from the derived quantities.

    Qubit: H = (omega_eff/2) sigma_z with jumps sigma_-^xi, sigma_+^xi.
    Boson: H = omega_eff a^dag a + (i/2)(Lambda a^dag^2 - conj(Lambda) a^2)
    with jumps S^dag a S = cosh(r) a - e^{i theta} sinh(r) a^dag and its
    conjugate, at rates (nbar+1) gamma_eff and nbar gamma_eff.
    """
    p = em.params
    sq = em.squeeze
    if p.system_kind == "qubit":
        s = pauli("minus")
        h = 0.5 * em.omega_eff * pauli("z")
    else:
        s = annihilation(trunc)
        ad = s.dag()
        n = ad @ s
        h = em.omega_eff * n + 0.5j * (em.lam * (ad @ ad) - np.conj(em.lam) * (s @ s))
    j_minus = squeezed_jump(s, sq)
    terms = [LindbladTerm(j_minus, (p.nbar + 1) * em.gamma_eff)]
    if p.nbar > 0:
        terms.append(LindbladTerm(j_minus.dag(), p.nbar * em.gamma_eff))
    return MasterEquation(hamiltonian=h, terms=terms)


def design_zero_effective_frequency(
    omega_q: float, omega_b: float, kappa: float, nbar: float
) -> float:
    """Coupling g that cancels the effective qubit frequency.

    Closed form g^2 = D-^2 D+^2 / [2 (2 nbar + 1)(omega_b^2 - omega_q^2 - kappa^2/4)];
    requires the bracketed term positive.  This regime typically stresses the
    adiabatic-elimination conditions, which downstream code surfaces as warnings.
    """
    b = omega_b**2 - omega_q**2 - kappa**2 / 4
    if b <= 0:
        raise NoSolutionError(
            "zero effective frequency needs omega_b^2 - omega_q^2 - kappa^2/4 > 0, "
            f"got {b:.6g}"
        )
    dm2 = (omega_b - omega_q) ** 2 + kappa**2 / 4
    dp2 = (omega_b + omega_q) ** 2 + kappa**2 / 4
    g = np.sqrt(dm2 * dp2 / (2 * (2 * nbar + 1) * b))
    probe = PhysicalParams(
        omega_s=omega_q, omega_b=omega_b, g=g, kappa=kappa, nbar=nbar, system_kind="qubit"
    )
    em = rabi_effective_model(probe)
    for w in em.warnings():
        warnings.warn(f"design_zero_effective_frequency: {w}", stacklevel=2)
    return float(g)


def design_target_squeezing(r_target: float, omega_s: float, kappa: float) -> float:
    """Bath frequency achieving reservoir squeezing strength r_target.

    Solves tanh^2 r = D-^2/D+^2 for omega_b by bisection on
    (omega_s, 10 omega_s e^{2 r}]; the kappa = 0 limit is omega_b = omega_s e^{2r}.
    """
    if r_target <= 0:
        raise ParameterError(f"r_target must be > 0, got {r_target}")

    def f(wb: float) -> float:
        dm2 = (wb - omega_s) ** 2 + kappa**2 / 4
        dp2 = (wb + omega_s) ** 2 + kappa**2 / 4
        return np.arctanh(np.sqrt(dm2 / dp2)) - r_target

    lo = omega_s * (1 + 1e-12)
    hi = omega_s * np.exp(2 * r_target) * 10
    if f(lo) > 0 or f(hi) < 0:
        raise NoSolutionError(
            f"no omega_b in ({lo:.6g}, {hi:.6g}] reaches r = {r_target} at kappa = {kappa}"
        )
    return float(brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16))


def with_designed_g(p: PhysicalParams) -> PhysicalParams:
    """Copy of p with g set by design_zero_effective_frequency."""
    g = design_zero_effective_frequency(p.omega_s, p.omega_b, p.kappa, p.nbar)
    return replace(p, g=g)
