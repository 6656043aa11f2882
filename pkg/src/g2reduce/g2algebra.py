"""Pointwise 7-dimensional positive-3-form algebra.

Coordinates on R^7 are ordered (x0, x1, x2, x3, t1, t2, t3); the last three
are the translation-invariant directions of the 4+3 splitting, so a triple of
2-forms on R^4 embeds as  phi = sum_i w^i ^ dt_i - dt1^dt2^dt3.

Orientation convention: the reference orientation STANDARD_ORIENTATION is the
one that makes the flat triple positive; it is the reverse of the
lexicographic coordinate volume dx0^...^dt3 (an empirical fact recorded by
the test suite together with the proportionality constant of the quadratic
form at the flat 3-form). Forms carry the flag in their `orientation`
attribute; flipping it negates every 7-form pairing.
"""

from dataclasses import dataclass

import numpy as np

from . import exterior as ext
from .errors import InvalidInputError, PositivityError
from .symcone import cone_check, det3, inv3

N7 = 7
VOL7_INDEX = 0  # a 7-form on R^7 has a single component
STANDARD_ORIENTATION = -1  # sign of the positive volume against dx0^...^dt3


def triple_to_phi(w1, w2, w3, orientation=STANDARD_ORIENTATION):
    """Assemble the 3-form  sum_i w^i ^ dt_i - dt1^dt2^dt3  on R^7.

    w1, w2, w3 are 2-forms on R^4 (exterior.Form with n=4, deg=2).
    """
    phi = ext.Form(N7, 3)
    for i, w in enumerate((w1, w2, w3)):
        if w.n != 4 or w.deg != 2:
            raise InvalidInputError("triple_to_phi expects 2-forms on R^4")
        w7 = ext.Form(N7, 2)
        for c, t in zip(w.c, ext.basis_tuples(4, 2)):
            if c != 0.0:
                w7.c[ext.basis_index(N7, 2)[t]] = c
        phi = phi + ext.wedge(w7, ext.monomial(N7, (4 + i,)))
    phi = phi - ext.monomial(N7, (4, 5, 6))
    phi.orientation = orientation
    return phi


def qform_of_3form(phi):
    """Matrix B with B(v, w) * vol7 = sym[(i_v phi) ^ (i_w phi) ^ phi].

    vol7 is the oriented reference volume; B is symmetric by the evenness of
    2-form wedges.
    """
    orientation = getattr(phi, "orientation", STANDARD_ORIENTATION)
    contractions = []
    for a in range(N7):
        v = np.zeros(N7)
        v[a] = 1.0
        contractions.append(ext.interior(v, phi))
    B = np.empty((N7, N7))
    for a in range(N7):
        for b in range(a, N7):
            pairing = ext.wedge(ext.wedge(contractions[a], contractions[b]), phi)
            B[a, b] = B[b, a] = orientation * pairing.c[VOL7_INDEX]
    return B


@dataclass
class G2Point:
    """A positive 3-form with its induced metric data."""

    phi: ext.Form
    g: np.ndarray          # 7x7 metric
    nu: float              # volume coefficient sqrt(det g)
    psi: ext.Form          # 4-form, one third of the Hodge dual of phi
    qform: np.ndarray      # the raw quadratic-form matrix B
    orientation: int = 1

    def phi_norm2(self):
        return ext.norm2(self.phi, self.g)


def metric_psi(phi, bisect_tol=1e-13):
    """Metric, volume coefficient and dual 4-form of a positive 3-form.

    The metric is the rescaling g = t*B of the quadratic form normalized so
    that |phi|^2_g = 7; t is found by bisection (the norm is monotone in t).
    """
    orientation = getattr(phi, "orientation", STANDARD_ORIENTATION)
    B = qform_of_3form(phi)
    eigs = np.linalg.eigvalsh(B)
    if eigs[0] <= 0.0:
        raise PositivityError(
            f"3-form is not positive: smallest quadratic-form eigenvalue {eigs[0]:.6e}",
            worst=float(eigs[0]),
        )

    def norm_at(t):
        return ext.norm2(phi, t * B)

    # |phi|^2_{tB} decreases monotonically in t; bracket around the cube-root scale
    t0 = (norm_at(1.0) / 7.0) ** (1.0 / 3.0)
    lo, hi = t0 / 4.0, t0 * 4.0
    flo, fhi = norm_at(lo) - 7.0, norm_at(hi) - 7.0
    if not (flo > 0.0 > fhi):
        raise InvalidInputError("metric normalization bracket failed")
    while (hi - lo) > bisect_tol * hi:
        mid = 0.5 * (lo + hi)
        if norm_at(mid) - 7.0 > 0.0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    g = t * B
    nu = float(np.sqrt(np.linalg.det(g)))
    psi = ext.hodge(phi, g) * (orientation / 3.0)
    return G2Point(phi=phi, g=g, nu=nu, psi=psi, qform=B, orientation=orientation)


# ------------------------------------------------- circle-invariant verifier
# 6D check of the torsion-free equations for the ansatz
#   phi = alpha ^ omega + V^{3/4} Re(Omega),
# reduced to pointwise exterior calculus on R^6 = (x1,x2,x3,t1,t2,t3) with jet
# coefficients. Sign conventions fixed so that exact data (Hessian of a
# unit-determinant convex potential, V solving the linearized equation)
# annihilate all residuals; see the test suite for the nontrivial exact case.


@dataclass
class CircleInvariantResiduals:
    """Pointwise residual norms of the reduced torsion-free system."""

    domega: float          # closedness of the symplectic form (structurally 0)
    curvature_coupling: float  # 4-form equation: F ^ omega + d(V^{3/4} Re Omega)
    imag_closed: float     # d(V^{1/4} Im Omega)
    volume_coupling: float  # dV ^ omega^2 - 2 V^{1/4} F ^ Im Omega

    def max(self):
        return max(self.domega, self.curvature_coupling, self.imag_closed, self.volume_coupling)


def as_verify(u_hess, u_third, V, dV, det_tol=1e-8):
    """Residuals of the reduced torsion-free equations at one point.

    u_hess: (3,3) Hessian of the potential, must be in the cone with unit
    determinant; u_third[c,a,b] its coordinate derivatives; V > 0 with
    gradient dV. All forms are built with first-order jets so the exterior
    derivatives are exact in the supplied data.
    """
    u_hess = np.asarray(u_hess, dtype=float)
    u_third = np.asarray(u_third, dtype=float)
    dV = np.asarray(dV, dtype=float)
    if u_third.shape != (3, 3, 3):
        raise InvalidInputError("u_third must have shape (3,3,3)")
    if not cone_check(u_hess):
        raise PositivityError("u_hess is not in the positive cone")
    d = det3(u_hess)
    if abs(d - 1.0) > det_tol:
        raise InvalidInputError(f"det(u_hess) = {d} is not 1 within {det_tol}")
    if not V > 0.0:
        raise PositivityError("V must be positive", worst=float(V))

    n = 6
    ng = 3  # jet derivatives run over x1..x3 only

    def jet(value, grad):
        return np.array([value, *grad], dtype=complex)

    uinv = inv3(u_hess)
    duinv = np.array([-uinv @ u_third[c] @ uinv for c in range(3)])

    omega = ext.Form(n, 2, dtype=complex)
    omega.c = np.zeros((len(ext.basis_tuples(n, 2)), 1 + ng), dtype=complex)
    for i in range(3):
        omega.c[ext.basis_index(n, 2)[(i, 3 + i)], 0] = 1.0

    # eps'_a = V^{-1/4} dt_a - i V^{1/4} sum_b u_ab dx^b
    jVm = jet(V ** -0.25, -0.25 * V ** -1.25 * dV)
    jVp = jet(V ** 0.25, 0.25 * V ** -0.75 * dV)
    eps = []
    for a in range(3):
        f = ext.Form(n, 1, dtype=complex)
        f.c = np.zeros((n, 1 + ng), dtype=complex)
        f.c[3 + a] = jVm
        for b in range(3):
            f.c[b] += -1j * (jVp * u_hess[a, b] + np.array([0.0, *(jVp[0] * u_third[:, a, b])], dtype=complex))
        eps.append(f)
    Omega = ext.wedge(ext.wedge(eps[0], eps[1]), eps[2])
    ReO = ext.Form(n, 3)
    ReO.c = Omega.c.real.copy()
    ImO = ext.Form(n, 3)
    ImO.c = Omega.c.imag.copy()

    # curvature 2-form of the induced connection: F^j = sum_i d_i(V u^{ij})
    F = ext.Form(n, 2)
    F.c = np.zeros((len(ext.basis_tuples(n, 2)), 1 + ng))
    for j, k, l in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        Fj = sum(dV[i] * uinv[i, j] + V * duinv[i][i, j] for i in range(3))
        idx = ext.basis_index(n, 2)[tuple(sorted((k, l)))]
        F.c[idx, 0] += ext.perm_sign((k, l)) * Fj

    jV34 = ext.Form(n, 0)
    jV34.c = np.array([jet(V ** 0.75, 0.75 * V ** -0.25 * dV).real])
    jV14 = ext.Form(n, 0)
    jV14.c = np.array([jet(V ** 0.25, 0.25 * V ** -0.75 * dV).real])

    def resid(*forms):
        return float(np.abs(sum(f.values() for f in forms)).max())

    r_domega = ext.dext(omega).maxabs()
    r_curv = resid(ext.wedge(F, omega), ext.dext(ext.wedge(jV34, ReO)))
    r_imag = ext.dext(ext.wedge(jV14, ImO)).maxabs()

    dVform = ext.Form(n, 1)
    dVform.c = np.zeros((n, 1 + ng))
    dVform.c[:3, 0] = dV
    om2 = ext.wedge(omega, omega)
    r_vol = resid(ext.wedge(dVform, om2), (-2.0 * V ** 0.25) * ext.wedge(F, ImO))

    return CircleInvariantResiduals(
        domega=r_domega,
        curvature_coupling=r_curv,
        imag_closed=r_imag,
        volume_coupling=r_vol,
    )


def standard_triple():
    """The constant-coefficient self-dual triple on R^4."""
    w1 = ext.monomial(4, (0, 1)) + ext.monomial(4, (2, 3))
    w2 = ext.monomial(4, (0, 2)) + ext.monomial(4, (3, 1))
    w3 = ext.monomial(4, (0, 3)) + ext.monomial(4, (1, 2))
    return w1, w2, w3


def standard_phi():
    """The flat reference 3-form built from the standard triple."""
    return triple_to_phi(*standard_triple())
