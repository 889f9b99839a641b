"""Numerical kernels: Lindblad right-hand side, RK4/Dormand-Prince steppers,
and the displaced-parity Wigner grid.

Two interchangeable backends:

* a numba ``@njit`` CSR backend for the hot loops (default when numba imports),
* a pure-numpy dense backend, selected by setting ``SQZBATH_NUMBA=0``.

The numba evolution kernels are compiled single-threaded on purpose: the
density matrices involved (d <= ~500) are too small for threading to beat the
per-launch overhead.  The Wigner kernel parallelizes over grid points, which
is one launch for the whole grid.

``benchmarks/bench_kernels.py`` compares the two backends.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as _sp

_flag = os.environ.get("SQZBATH_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

if NUMBA_REQUESTED:
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

if not HAVE_NUMBA:
    def njit(*args, **kwargs):  # type: ignore
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range  # type: ignore


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) coefficients
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.zeros((7, 7))
_DP_A[1, 0] = 1 / 5
_DP_A[2, :2] = (3 / 40, 9 / 40)
_DP_A[3, :3] = (44 / 45, -56 / 15, 32 / 9)
_DP_A[4, :4] = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
_DP_A[5, :5] = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
_DP_A[6, :6] = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_DP_B = _DP_A[6, :7].copy()  # 5th-order weights (FSAL)
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


# ---------------------------------------------------------------------------
# Compiled master equation container
# ---------------------------------------------------------------------------

class CompiledME:
    """Sparse/dense packing of H and the jump operators for the steppers.

    ``K = H - (i/2) sum_k rate_k J_k^dag J_k`` and the jumps carry sqrt(rate)
    folded in, so the Hermitian-input RHS is
    ``-i (K rho - (K rho)^dag) + sum_k (J_k (J_k rho)^dag)^dag``.
    """

    def __init__(self, hamiltonian: np.ndarray, jumps_with_rates, backend: str | None = None):
        H = np.ascontiguousarray(hamiltonian, dtype=np.complex128)
        d = H.shape[0]
        self.d = d
        js = [np.sqrt(rate) * np.asarray(j, dtype=np.complex128)
              for j, rate in jumps_with_rates if rate != 0.0]
        K = H - 0.5j * sum((j.conj().T @ j for j in js), np.zeros_like(H))
        self.K = np.ascontiguousarray(K)
        self.jumps = [np.ascontiguousarray(j) for j in js]
        self.jumps_dag = [np.ascontiguousarray(j.conj().T) for j in js]

        Kc = _sp.csr_matrix(self.K)
        jcs = [_sp.csr_matrix(j) for j in self.jumps]
        max_jump_row = max((int(np.diff(jc.indptr).max()) for jc in jcs if jc.nnz), default=0)
        sparse_ok = Kc.nnz <= 12 * d and max_jump_row <= 4
        if backend is None:
            backend = "numba" if (HAVE_NUMBA and sparse_ok) else "numpy"
        if backend == "numba" and not HAVE_NUMBA:
            backend = "numpy"
        self.backend = backend

        # CSR packing (always built; cheap, and the residual check uses it)
        self.Kd = Kc.data.astype(np.complex128)
        self.Ki = Kc.indices.astype(np.int64)
        self.Kp = Kc.indptr.astype(np.int64)
        nj = len(jcs)
        jp = np.zeros((nj, d + 1), dtype=np.int64)
        jd, ji = [], []
        off = 0
        for k, jc in enumerate(jcs):
            jp[k] = jc.indptr.astype(np.int64) + off
            jd.append(jc.data.astype(np.complex128))
            ji.append(jc.indices.astype(np.int64))
            off += jc.nnz
        self.Jd = np.concatenate(jd) if jd else np.zeros(0, dtype=np.complex128)
        self.Ji = np.concatenate(ji) if ji else np.zeros(0, dtype=np.int64)
        self.Jp = jp

    def csr_args(self):
        return (self.Kd, self.Ki, self.Kp, self.Jd, self.Ji, self.Jp)

    def rhs_hermitian(self, rho: np.ndarray) -> np.ndarray:
        """RHS for Hermitian rho, on whichever backend is selected."""
        if self.backend == "numba":
            out = np.empty_like(rho)
            w = np.empty_like(rho)
            rhs_csr(*self.csr_args(), rho, out, w)
            return out
        return rhs_dense(self.K, self.jumps, self.jumps_dag, rho)

    def stability_interval(self) -> float:
        """Fixed-step RK4 dt that keeps the whole Liouvillian spectrum stable.

        Uses the exact spectral spread of H (imaginary extent) and twice the
        top eigenvalue of sum rate_k J_k^dag J_k (real extent), with the
        rectangle corner mapped into the RK4 stability region.
        """
        evh = np.linalg.eigvalsh(0.5 * (self.K + self.K.conj().T))
        m = float(evh[-1] - evh[0])
        r = 0.0
        if self.jumps:
            s = sum(jd @ j for jd, j in zip(self.jumps_dag, self.jumps))
            r = 2.0 * float(np.linalg.eigvalsh(0.5 * (s + s.conj().T))[-1].real)
        lam = float(np.hypot(m, r))
        if lam == 0.0:
            return np.inf
        return 2.0 / lam


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def rhs_dense(K, jumps, jumps_dag, rho):
    """-i(K rho - rho K^dag) + sum J rho J^dag for Hermitian rho (dense BLAS)."""
    m = K @ rho
    out = -1j * (m - m.conj().T)
    for j, jd in zip(jumps, jumps_dag):
        out += (j @ rho) @ jd
    return out


def rk4_chunk_dense(cme: CompiledME, rho, dt, nsteps):
    for _ in range(nsteps):
        k1 = cme.rhs_hermitian(rho)
        k2 = cme.rhs_hermitian(rho + 0.5 * dt * k1)
        k3 = cme.rhs_hermitian(rho + 0.5 * dt * k2)
        k4 = cme.rhs_hermitian(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
    return rho


def dopri_chunk_dense(cme: CompiledME, rho, t, t_end, dt, rtol, atol, max_steps):
    """Adaptive Dormand-Prince march to t_end. Returns (rho, t, dt, status, nsteps).

    status: 0 reached t_end, 1 step-size underflow, 2 non-finite values,
    3 step budget exhausted.
    """
    k = [None] * 7
    k[0] = cme.rhs_hermitian(rho)
    nsteps = 0
    dt_min = max(abs(t_end), 1.0) * 1e-14
    while t < t_end:
        if nsteps >= max_steps:
            return rho, t, dt, 3, nsteps
        dt = min(dt, t_end - t)
        for i in range(1, 7):
            y = rho
            for j in range(i):
                if _DP_A[i, j] != 0.0:
                    y = y + (dt * _DP_A[i, j]) * k[j]
            k[i] = cme.rhs_hermitian(y)
        ynew = rho
        for j in range(7):
            if _DP_B[j] != 0.0:
                ynew = ynew + (dt * _DP_B[j]) * k[j]
        err = np.zeros_like(rho)
        for j in range(7):
            if _DP_E[j] != 0.0:
                err = err + (dt * _DP_E[j]) * k[j]
        scale = atol + rtol * np.maximum(np.abs(rho), np.abs(ynew))
        enorm = float(np.max(np.abs(err) / scale))
        if not np.isfinite(enorm):
            return rho, t, dt, 2, nsteps
        if enorm <= 1.0:
            t += dt
            rho = 0.5 * (ynew + ynew.conj().T)
            k[0] = cme.rhs_hermitian(rho)  # recompute: hermitization broke FSAL exactness
            nsteps += 1
        factor = 0.9 * (enorm + 1e-16) ** -0.2
        dt *= min(5.0, max(0.2, factor))
        if dt < dt_min:
            return rho, t, dt, 1, nsteps
    return rho, t, dt, 0, nsteps


# ---------------------------------------------------------------------------
# numba CSR backend
# ---------------------------------------------------------------------------

@njit(cache=True)
def rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, rho, out, w):
    """out = -i(K rho - (K rho)^dag) + sum_k (J_k rho J_k^dag), Hermitian rho."""
    n = rho.shape[0]
    nj = Jp.shape[0]
    for i in range(n):
        for j in range(n):
            w[i, j] = 0.0
        for p in range(Kp[i], Kp[i + 1]):
            v = Kd[p]
            ki = Ki[p]
            for j in range(n):
                w[i, j] += v * rho[ki, j]
    for i in range(n):
        for j in range(n):
            z = w[i, j] - np.conj(w[j, i])
            acc = complex(z.imag, -z.real)
            for k in range(nj):
                for p in range(Jp[k, i], Jp[k, i + 1]):
                    vi = Jd[p]
                    ri = Ji[p]
                    for q in range(Jp[k, j], Jp[k, j + 1]):
                        acc += vi * np.conj(Jd[q]) * rho[ri, Ji[q]]
            out[i, j] = acc


@njit(cache=True)
def rk4_chunk_csr(Kd, Ki, Kp, Jd, Ji, Jp, rho, dt, nsteps, k1, k2, k3, k4, tmp, w):
    n = rho.shape[0]
    for _ in range(nsteps):
        rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, rho, k1, w)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + 0.5 * dt * k1[i, j]
        rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, tmp, k2, w)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + 0.5 * dt * k2[i, j]
        rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, tmp, k3, w)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + dt * k3[i, j]
        rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, tmp, k4, w)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + (dt / 6.0) * (
                    k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j]
                )
        for i in range(n):
            for j in range(i, n):
                v = 0.5 * (tmp[i, j] + np.conj(tmp[j, i]))
                rho[i, j] = v
                rho[j, i] = np.conj(v)


@njit(cache=True)
def dopri_chunk_csr(Kd, Ki, Kp, Jd, Ji, Jp, rho, t, t_end, dt, rtol, atol,
                    max_steps, ks, tmp, w):
    """Adaptive Dormand-Prince march; ks has shape (7, n, n).

    Returns (t, dt, status, nsteps); rho is updated in place.
    """
    n = rho.shape[0]
    a = np.zeros((7, 7))
    a[1, 0] = 1 / 5
    a[2, 0] = 3 / 40; a[2, 1] = 9 / 40
    a[3, 0] = 44 / 45; a[3, 1] = -56 / 15; a[3, 2] = 32 / 9
    a[4, 0] = 19372 / 6561; a[4, 1] = -25360 / 2187; a[4, 2] = 64448 / 6561; a[4, 3] = -212 / 729
    a[5, 0] = 9017 / 3168; a[5, 1] = -355 / 33; a[5, 2] = 46732 / 5247; a[5, 3] = 49 / 176; a[5, 4] = -5103 / 18656
    a[6, 0] = 35 / 384; a[6, 1] = 0.0; a[6, 2] = 500 / 1113; a[6, 3] = 125 / 192; a[6, 4] = -2187 / 6784; a[6, 5] = 11 / 84
    e = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
    b = a[6].copy()

    rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, rho, ks[0], w)
    nsteps = 0
    dt_min = max(abs(t_end), 1.0) * 1e-14
    while t < t_end:
        if nsteps >= max_steps:
            return t, dt, 3, nsteps
        if dt > t_end - t:
            dt = t_end - t
        for s in range(1, 7):
            for i in range(n):
                for j in range(n):
                    acc = rho[i, j]
                    for q in range(s):
                        if a[s, q] != 0.0:
                            acc += dt * a[s, q] * ks[q, i, j]
                    tmp[i, j] = acc
            rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, tmp, ks[s], w)
        # tmp currently holds the 5th-order solution (stage-7 input, FSAL)
        enorm = 0.0
        for i in range(n):
            for j in range(n):
                ynew = rho[i, j]
                ee = 0.0j
                for q in range(7):
                    if b[q] != 0.0:
                        ynew += dt * b[q] * ks[q, i, j]
                    if e[q] != 0.0:
                        ee += dt * e[q] * ks[q, i, j]
                tmp[i, j] = ynew
                sc = atol + rtol * max(abs(rho[i, j]), abs(ynew))
                v = abs(ee) / sc
                if v > enorm:
                    enorm = v
        if not np.isfinite(enorm):
            return t, dt, 2, nsteps
        if enorm <= 1.0:
            t += dt
            for i in range(n):
                for j in range(i, n):
                    v = 0.5 * (tmp[i, j] + np.conj(tmp[j, i]))
                    rho[i, j] = v
                    rho[j, i] = np.conj(v)
            rhs_csr(Kd, Ki, Kp, Jd, Ji, Jp, rho, ks[0], w)
            nsteps += 1
        factor = 0.9 * (enorm + 1e-16) ** -0.2
        if factor > 5.0:
            factor = 5.0
        elif factor < 0.2:
            factor = 0.2
        dt *= factor
        if dt < dt_min:
            return t, dt, 1, nsteps
    return t, dt, 0, nsteps


# ---------------------------------------------------------------------------
# Wigner displaced-parity kernels
# ---------------------------------------------------------------------------

_X_OVERFLOW = 1300.0  # exp(x/2) still finite; W is ~e^{-x/2} there anyway


@njit(cache=True, parallel=True)
def wigner_grid_csr(rho, res, ims, lnfact, out):
    """W(alpha) = (2/pi) sum_{mn} rho_{mn} (-1)^m D_{nm}(2 alpha).

    Displacement matrix elements via associated-Laguerre recurrences, exact at
    the state's truncation.  Parallel over grid rows.
    """
    d = rho.shape[0]
    ny = ims.shape[0]
    nx = res.shape[0]
    two_over_pi = 2.0 / np.pi
    for iy in prange(ny):
        for ix in range(nx):
            br = 2.0 * res[ix]
            bi = 2.0 * ims[iy]
            x = br * br + bi * bi
            if x > _X_OVERFLOW:
                out[iy, ix] = 0.0
                continue
            emx = np.exp(-0.5 * x)
            # s = 0 diagonal: L_m(x) with prefactor e^{-x/2}
            acc = 0.0
            lm1 = 0.0
            lm = 1.0
            sign = 1.0
            for m in range(d):
                if m > 0:
                    lnew = ((2 * m - 1 - x) * lm - (m - 1) * lm1) / m
                    lm1 = lm
                    lm = lnew
                acc += sign * rho[m, m].real * emx * lm
                sign = -sign
            if x > 0.0:
                lnb = 0.5 * np.log(x)  # ln|beta|
                phr = br / np.sqrt(x)
                phi = bi / np.sqrt(x)
                pr = 1.0
                pi_ = 0.0
                for s in range(1, d):
                    # phase^s
                    prn = pr * phr - pi_ * phi
                    pin = pr * phi + pi_ * phr
                    pr = prn
                    pi_ = pin
                    lm1 = 0.0
                    lm = 1.0
                    sign = 1.0
                    for m in range(d - s):
                        if m > 0:
                            lnew = ((2 * m - 1 + s - x) * lm - (m - 1 + s) * lm1) / m
                            lm1 = lm
                            lm = lnew
                        lpref = -0.5 * x + s * lnb - 0.5 * (lnfact[m + s] - lnfact[m])
                        pref = np.exp(lpref)
                        # 2 Re[rho_{m,m+s} * (-1)^m * pref * phase^s * L]
                        rr = rho[m, m + s]
                        re_term = (rr.real * pr - rr.imag * pi_) * pref * lm
                        acc += 2.0 * sign * re_term
                        sign = -sign
            out[iy, ix] = two_over_pi * acc


def wigner_grid_dense(rho, res, ims, lnfact):
    """Vectorized numpy twin of wigner_grid_csr (same recurrences, grid-wide)."""
    d = rho.shape[0]
    R, I = np.meshgrid(res, ims)
    br = 2.0 * R.ravel()
    bi = 2.0 * I.ravel()
    x = br * br + bi * bi
    ok = x <= _X_OVERFLOW
    xs = np.where(ok, x, 0.0)
    acc = np.zeros_like(xs)
    emx = np.exp(-0.5 * xs)
    lm1 = np.zeros_like(xs)
    lm = np.ones_like(xs)
    sign = 1.0
    for m in range(d):
        if m > 0:
            lnew = ((2 * m - 1 - xs) * lm - (m - 1) * lm1) / m
            lm1, lm = lm, lnew
        acc += sign * rho[m, m].real * emx * lm
        sign = -sign
    with np.errstate(divide="ignore"):
        lnb = 0.5 * np.log(np.where(xs > 0, xs, 1.0))
    absb = np.sqrt(xs)
    nz = absb > 0
    phase = np.ones_like(xs, dtype=np.complex128)
    phase[nz] = (br[nz] + 1j * bi[nz]) / absb[nz]
    ppow = np.ones_like(phase)
    for s in range(1, d):
        ppow = ppow * phase
        lm1 = np.zeros_like(xs)
        lm = np.ones_like(xs)
        sign = 1.0
        for m in range(d - s):
            if m > 0:
                lnew = ((2 * m - 1 + s - xs) * lm - (m - 1 + s) * lm1) / m
                lm1, lm = lm, lnew
            pref = np.where(
                nz,
                np.exp(-0.5 * xs + s * lnb - 0.5 * (lnfact[m + s] - lnfact[m])),
                0.0,
            )
            term = (rho[m, m + s] * ppow).real * pref * lm
            acc += 2.0 * sign * term
            sign = -sign
    w = (2.0 / np.pi) * acc
    w[~ok] = 0.0
    return w.reshape(len(ims), len(res))


def wigner_grid(rho: np.ndarray, res: np.ndarray, ims: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    lnfact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, d, dtype=np.float64)))))
    if HAVE_NUMBA:
        out = np.empty((len(ims), len(res)))
        wigner_grid_csr(np.ascontiguousarray(rho), np.asarray(res, float),
                        np.asarray(ims, float), lnfact, out)
        return out
    return wigner_grid_dense(rho, res, ims, lnfact)
