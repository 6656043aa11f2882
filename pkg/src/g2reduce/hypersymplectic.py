"""Pointwise algebra of positive triples of 2-forms on R^4.

A triple (w^1, w^2, w^3) is positive when its Gram matrix for the wedge
pairing, q^{ij} chi0 = w^i ^ w^j, is positive definite. The normalized
volume chi = det(q)^{1/3} chi0 does not depend on the reference chi0.
"""

from dataclasses import dataclass

import numpy as np

from . import exterior as ext
from .errors import InvalidInputError, PositivityError
from .symcone import det3, inv3

VOL4_INDEX = 0


def wedge_pairing(a, b):
    """Coefficient of a ^ b against dx0^dx1^dx2^dx3 for 2-forms on R^4."""
    return float(ext.wedge(a, b).c[VOL4_INDEX])


@dataclass
class TriplePoint:
    """A triple of 2-forms with a positive reference volume coefficient."""

    omegas: tuple  # three exterior.Form(4, 2)
    chi0: float = 1.0

    def __post_init__(self):
        if len(self.omegas) != 3:
            raise InvalidInputError("a triple needs exactly three 2-forms")
        if not self.chi0 > 0.0:
            raise PositivityError("chi0 must be positive", worst=self.chi0)

    def gram(self):
        q = np.empty((3, 3))
        for i in range(3):
            for j in range(i, 3):
                q[i, j] = q[j, i] = wedge_pairing(self.omegas[i], self.omegas[j]) / self.chi0
        return q


@dataclass
class LambdaTheta:
    """Normalized volume and Gram data of a positive triple."""

    chi: float             # det(q)^{1/3} chi0
    lam_upper: np.ndarray  # lambda^{ij} = q^{ij} det(q)^{-1/3}, det = 1
    lam_lower: np.ndarray  # inverse matrix lambda_{ij}
    thetas: tuple          # Theta_i = sum_j lambda_{ij} w^j


def chi_lambda(t: TriplePoint) -> LambdaTheta:
    """Volume coefficient, unit-determinant Gram matrix, and contracted forms."""
    q = t.gram()
    eigs = np.linalg.eigvalsh(q)
    if eigs[0] <= 0.0:
        raise PositivityError(
            f"not a positive triple: Gram eigenvalues {eigs}", worst=float(eigs[0])
        )
    detq = det3(q)
    chi = detq ** (1.0 / 3.0) * t.chi0
    lam_upper = q * detq ** (-1.0 / 3.0)
    lam_lower = inv3(lam_upper)
    thetas = tuple(
        sum((lam_lower[i, j] * t.omegas[j] for j in range(3)), ext.Form(4, 2))
        for i in range(3)
    )
    return LambdaTheta(chi=float(chi), lam_upper=lam_upper, lam_lower=lam_lower, thetas=thetas)


def volume_bound_check(lam, det_tol=1e-8, eq_tol=1e-8):
    """Trace bound for unit-determinant cone matrices: trace >= 3.

    Returns (trace, bound_ok, equality); equality flags lam == identity.
    """
    lam = np.asarray(lam, dtype=float)
    if abs(det3(lam) - 1.0) > det_tol:
        raise InvalidInputError(f"det(lambda) = {det3(lam)} is not 1 within {det_tol}")
    tr = float(np.trace(lam))
    bound_ok = tr >= 3.0 - 1e-10
    equality = bool(np.abs(lam - np.eye(3)).max() < eq_tol)
    return tr, bound_ok, equality


@dataclass
class QForm:
    """Wedge-pairing quadrature accumulated over weighted samples."""

    Q: np.ndarray
    int_chi: float
    gap_normalized: float      # 1 - int(chi') after mapping Q to the identity
    det_Q: float
    int_chi_normalized: float


def q_accumulate(samples):
    """Accumulate Q^{ij} = sum w * q^{ij} chi0 over (TriplePoint, weight) pairs.

    Also integrates chi and reports the volume bound in the basis where Q is
    the identity: int(chi') <= 1 with equality only for constant-identity
    Gram matrices. (The unnormalized form of the bound is
    int(chi) <= det(Q)^{1/3}, the exponent following from the change of
    basis; the normalized gap is what is certified.)
    """
    samples = list(samples)
    if not samples:
        raise InvalidInputError("q_accumulate: empty sample list")
    Q = np.zeros((3, 3))
    int_chi = 0.0
    lts = []
    for tp, w in samples:
        if not w > 0.0:
            raise PositivityError("quadrature weights must be positive", worst=w)
        lt = chi_lambda(tp)
        lts.append((tp, w, lt))
        Q += w * tp.gram() * tp.chi0
        int_chi += w * lt.chi
    # normalize: R Q R^T = I via the Cholesky factor of Q
    L = np.linalg.cholesky(Q)
    R = np.linalg.inv(L)
    detR = det3(R)
    # chi scales by det(A)^{2/3} under w -> A w
    int_chi_norm = 0.0
    for tp, w, lt in lts:
        int_chi_norm += w * lt.chi * abs(detR) ** (2.0 / 3.0)
    gap = 1.0 - int_chi_norm
    return QForm(
        Q=Q,
        int_chi=float(int_chi),
        gap_normalized=float(gap),
        det_Q=float(det3(Q)),
        int_chi_normalized=float(int_chi_norm),
    )


def transform_triple(t: TriplePoint, A) -> TriplePoint:
    """Basis change w^i -> sum_j A^{ij} w^j (chi0 unchanged)."""
    A = np.asarray(A, dtype=float)
    new = tuple(
        sum((A[i, j] * t.omegas[j] for j in range(3)), ext.Form(4, 2)) for i in range(3)
    )
    return TriplePoint(omegas=new, chi0=t.chi0)
