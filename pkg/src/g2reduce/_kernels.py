"""Hot numeric kernels: batched symmetric-3x3 algebra and grid stencils.

Every kernel has a pure-numpy implementation and a numba @njit implementation
operating on identical inputs; `_backend.USE_NUMBA` selects which one is
exported. Packed symmetric storage order is (s11, s22, s33, s12, s13, s23).
"""

import numpy as np

from ._backend import USE_NUMBA, njit

# ---------------------------------------------------------------- sym3 algebra


def _sym3_det_np(s):
    a, b, c, d, e, f = (s[..., k] for k in range(6))
    return a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e)


def _sym3_inv_np(s):
    a, b, c, d, e, f = (s[..., k] for k in range(6))
    det = _sym3_det_np(s)
    out = np.empty_like(s)
    out[..., 0] = (b * c - f * f) / det
    out[..., 1] = (a * c - e * e) / det
    out[..., 2] = (a * b - d * d) / det
    out[..., 3] = (e * f - d * c) / det
    out[..., 4] = (d * f - e * b) / det
    out[..., 5] = (d * e - a * f) / det
    return out


def _sym3_minors_np(s):
    a, b, c, d, e, f = (s[..., k] for k in range(6))
    m = np.empty(s.shape[:-1] + (3,), dtype=s.dtype)
    m[..., 0] = a
    m[..., 1] = a * b - d * d
    m[..., 2] = _sym3_det_np(s)
    return m


def _sym3_eigvals_np(s):
    """Eigenvalues of packed symmetric 3x3, ascending, by the trigonometric formula."""
    a, b, c, d, e, f = (s[..., k] for k in range(6))
    q = (a + b + c) / 3.0
    p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * (d * d + e * e + f * f)
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    safe = p > 0.0
    ps = np.where(safe, p, 1.0)
    bb = np.empty_like(s)
    bb[..., 0] = (a - q) / ps
    bb[..., 1] = (b - q) / ps
    bb[..., 2] = (c - q) / ps
    bb[..., 3] = d / ps
    bb[..., 4] = e / ps
    bb[..., 5] = f / ps
    r = np.clip(_sym3_det_np(bb) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    out = np.stack([lo, mid, hi], axis=-1)
    return np.where(safe[..., None], out, np.stack([q, q, q], axis=-1))


@njit
def _sym3_det_nb(s):
    n = s.shape[0]
    out = np.empty(n)
    for i in range(n):
        a, b, c, d, e, f = s[i, 0], s[i, 1], s[i, 2], s[i, 3], s[i, 4], s[i, 5]
        out[i] = a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e)
    return out


@njit
def _sym3_inv_nb(s):
    n = s.shape[0]
    out = np.empty_like(s)
    for i in range(n):
        a, b, c, d, e, f = s[i, 0], s[i, 1], s[i, 2], s[i, 3], s[i, 4], s[i, 5]
        det = a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e)
        out[i, 0] = (b * c - f * f) / det
        out[i, 1] = (a * c - e * e) / det
        out[i, 2] = (a * b - d * d) / det
        out[i, 3] = (e * f - d * c) / det
        out[i, 4] = (d * f - e * b) / det
        out[i, 5] = (d * e - a * f) / det
    return out


@njit
def _sym3_minors_nb(s):
    n = s.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        a, b, c, d, e, f = s[i, 0], s[i, 1], s[i, 2], s[i, 3], s[i, 4], s[i, 5]
        out[i, 0] = a
        out[i, 1] = a * b - d * d
        out[i, 2] = a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e)
    return out


@njit
def _sym3_eigvals_nb(s):
    n = s.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        a, b, c, d, e, f = s[i, 0], s[i, 1], s[i, 2], s[i, 3], s[i, 4], s[i, 5]
        q = (a + b + c) / 3.0
        p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * (d * d + e * e + f * f)
        p = np.sqrt(max(p2 / 6.0, 0.0))
        if p <= 0.0:
            out[i, 0] = q
            out[i, 1] = q
            out[i, 2] = q
            continue
        ba, bbv, bc, bd, be, bf = (a - q) / p, (b - q) / p, (c - q) / p, d / p, e / p, f / p
        detb = ba * (bbv * bc - bf * bf) - bd * (bd * bc - bf * be) + be * (bd * bf - bbv * be)
        r = min(max(detb / 2.0, -1.0), 1.0)
        phi = np.arccos(r) / 3.0
        hi = q + 2.0 * p * np.cos(phi)
        lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
        out[i, 0] = lo
        out[i, 1] = 3.0 * q - hi - lo
        out[i, 2] = hi
    return out


# ------------------------------------------------------------- grid stencils
# U is the full 3D lattice array; idx is an (m, 3) int64 array of node indices
# at which to evaluate. Callers guarantee every read lands on a valued node.


def _hessian6_np(U, idx, hx, hy, hz):
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    u0 = U[i, j, k]
    out = np.empty((idx.shape[0], 6))
    out[:, 0] = (U[i + 1, j, k] - 2.0 * u0 + U[i - 1, j, k]) / (hx * hx)
    out[:, 1] = (U[i, j + 1, k] - 2.0 * u0 + U[i, j - 1, k]) / (hy * hy)
    out[:, 2] = (U[i, j, k + 1] - 2.0 * u0 + U[i, j, k - 1]) / (hz * hz)
    out[:, 3] = (U[i + 1, j + 1, k] + U[i - 1, j - 1, k] - U[i + 1, j - 1, k] - U[i - 1, j + 1, k]) / (4.0 * hx * hy)
    out[:, 4] = (U[i + 1, j, k + 1] + U[i - 1, j, k - 1] - U[i + 1, j, k - 1] - U[i - 1, j, k + 1]) / (4.0 * hx * hz)
    out[:, 5] = (U[i, j + 1, k + 1] + U[i, j - 1, k - 1] - U[i, j + 1, k - 1] - U[i, j - 1, k + 1]) / (4.0 * hy * hz)
    return out


@njit
def _hessian6_nb(U, idx, hx, hy, hz):
    m = idx.shape[0]
    out = np.empty((m, 6))
    for n in range(m):
        i, j, k = idx[n, 0], idx[n, 1], idx[n, 2]
        u0 = U[i, j, k]
        out[n, 0] = (U[i + 1, j, k] - 2.0 * u0 + U[i - 1, j, k]) / (hx * hx)
        out[n, 1] = (U[i, j + 1, k] - 2.0 * u0 + U[i, j - 1, k]) / (hy * hy)
        out[n, 2] = (U[i, j, k + 1] - 2.0 * u0 + U[i, j, k - 1]) / (hz * hz)
        out[n, 3] = (U[i + 1, j + 1, k] + U[i - 1, j - 1, k] - U[i + 1, j - 1, k] - U[i - 1, j + 1, k]) / (4.0 * hx * hy)
        out[n, 4] = (U[i + 1, j, k + 1] + U[i - 1, j, k - 1] - U[i + 1, j, k - 1] - U[i - 1, j, k + 1]) / (4.0 * hx * hz)
        out[n, 5] = (U[i, j + 1, k + 1] + U[i, j - 1, k - 1] - U[i, j + 1, k - 1] - U[i, j - 1, k + 1]) / (4.0 * hy * hz)
    return out


def _grad3_np(U, idx, hx, hy, hz):
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    out = np.empty((idx.shape[0], 3))
    out[:, 0] = (U[i + 1, j, k] - U[i - 1, j, k]) / (2.0 * hx)
    out[:, 1] = (U[i, j + 1, k] - U[i, j - 1, k]) / (2.0 * hy)
    out[:, 2] = (U[i, j, k + 1] - U[i, j, k - 1]) / (2.0 * hz)
    return out


@njit
def _grad3_nb(U, idx, hx, hy, hz):
    m = idx.shape[0]
    out = np.empty((m, 3))
    for n in range(m):
        i, j, k = idx[n, 0], idx[n, 1], idx[n, 2]
        out[n, 0] = (U[i + 1, j, k] - U[i - 1, j, k]) / (2.0 * hx)
        out[n, 1] = (U[i, j + 1, k] - U[i, j - 1, k]) / (2.0 * hy)
        out[n, 2] = (U[i, j, k + 1] - U[i, j, k - 1]) / (2.0 * hz)
    return out


def _rk4_profile_np(f0, f0p, tmax, nsteps):
    # kept loop-form: the step recurrence is inherently sequential
    return _rk4_profile_generic(f0, f0p, tmax, nsteps)


def _rk4_profile_generic(f0, f0p, tmax, nsteps):
    dt = tmax / nsteps
    fs = np.empty(nsteps + 1)
    fps = np.empty(nsteps + 1)
    fs[0] = f0
    fps[0] = f0p
    f, fp = f0, f0p
    for n in range(nsteps):
        k1f = fp
        k1p = 4.0 * fp * fp / f + 27.0 / (16.0 * f * f)
        f2 = f + 0.5 * dt * k1f
        p2 = fp + 0.5 * dt * k1p
        if f2 <= 0.0:
            return fs[: n + 1], fps[: n + 1], False
        k2f = p2
        k2p = 4.0 * p2 * p2 / f2 + 27.0 / (16.0 * f2 * f2)
        f3 = f + 0.5 * dt * k2f
        p3 = fp + 0.5 * dt * k2p
        if f3 <= 0.0:
            return fs[: n + 1], fps[: n + 1], False
        k3f = p3
        k3p = 4.0 * p3 * p3 / f3 + 27.0 / (16.0 * f3 * f3)
        f4 = f + dt * k3f
        p4 = fp + dt * k3p
        if f4 <= 0.0:
            return fs[: n + 1], fps[: n + 1], False
        k4f = p4
        k4p = 4.0 * p4 * p4 / f4 + 27.0 / (16.0 * f4 * f4)
        f = f + dt * (k1f + 2.0 * k2f + 2.0 * k3f + k4f) / 6.0
        fp = fp + dt * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0
        if f <= 0.0:
            return fs[: n + 1], fps[: n + 1], False
        fs[n + 1] = f
        fps[n + 1] = fp
    return fs, fps, True


_rk4_profile_nb = njit(_rk4_profile_generic)


if USE_NUMBA:
    sym3_det = _sym3_det_nb
    sym3_inv = _sym3_inv_nb
    sym3_minors = _sym3_minors_nb
    sym3_eigvals = _sym3_eigvals_nb
    hessian6 = _hessian6_nb
    grad3 = _grad3_nb
    rk4_profile = _rk4_profile_nb
else:
    sym3_det = _sym3_det_np
    sym3_inv = _sym3_inv_np
    sym3_minors = _sym3_minors_np
    sym3_eigvals = _sym3_eigvals_np
    hessian6 = _hessian6_np
    grad3 = _grad3_np
    rk4_profile = _rk4_profile_np
