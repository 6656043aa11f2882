"""Positive-definite cone tests and small symmetric-matrix algebra.

Matrices are plain (3, 3) numpy arrays (symmetric by convention). Batched
field variants live in `_kernels` with packed (n, 6) storage, component order
(s11, s22, s33, s12, s13, s23).
"""

import numpy as np

from .errors import ConeViolationError, InvalidInputError

MINOR_FLOOR = 1e-14

PACK_INDEX = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


def pack(S):
    """(3,3) symmetric -> packed (6,)."""
    S = np.asarray(S, dtype=float)
    return np.array([S[i, j] for i, j in PACK_INDEX])


def unpack(p):
    """packed (..., 6) -> (..., 3, 3)."""
    p = np.asarray(p, dtype=float)
    S = np.empty(p.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(PACK_INDEX):
        S[..., i, j] = p[..., k]
        S[..., j, i] = p[..., k]
    return S


def leading_minors(S):
    S = np.asarray(S, dtype=float)
    m1 = S[0, 0]
    m2 = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    m3 = float(np.linalg.det(S))
    return np.array([m1, m2, m3])


def cone_check(S):
    """True iff S is positive definite (all leading principal minors above the floor)."""
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise InvalidInputError("cone_check: non-finite entries")
    return bool(np.all(leading_minors(S) > MINOR_FLOOR))


def require_cone(S, context=""):
    """Raise ConeViolationError carrying the offending minor if S is not in the cone."""
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise InvalidInputError(f"{context}: non-finite entries")
    minors = leading_minors(S)
    for k, m in enumerate(minors):
        if not m > MINOR_FLOOR:
            raise ConeViolationError(
                f"{context}: leading principal minor {k + 1} = {m:.3e} is not positive",
                minor_index=k + 1,
                minor_value=float(m),
            )


def det3(S):
    """Determinant by the explicit cofactor formula."""
    S = np.asarray(S, dtype=float)
    return (
        S[0, 0] * (S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1])
        - S[0, 1] * (S[1, 0] * S[2, 2] - S[1, 2] * S[2, 0])
        + S[0, 2] * (S[1, 0] * S[2, 1] - S[1, 1] * S[2, 0])
    )


def inv3(S):
    """Inverse by the adjugate formula."""
    S = np.asarray(S, dtype=float)
    d = det3(S)
    adj = np.array(
        [
            [S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1], S[0, 2] * S[2, 1] - S[0, 1] * S[2, 2], S[0, 1] * S[1, 2] - S[0, 2] * S[1, 1]],
            [S[1, 2] * S[2, 0] - S[1, 0] * S[2, 2], S[0, 0] * S[2, 2] - S[0, 2] * S[2, 0], S[0, 2] * S[1, 0] - S[0, 0] * S[1, 2]],
            [S[1, 0] * S[2, 1] - S[1, 1] * S[2, 0], S[0, 1] * S[2, 0] - S[0, 0] * S[2, 1], S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]],
        ]
    )
    return adj / d


def inverse_and_detpow(S, p):
    """(S^{-1}, det(S)^p) for S in the cone; det^p computed as exp(p log det)."""
    require_cone(S, "inverse_and_detpow")
    d = det3(S)
    return inv3(S), float(np.exp(p * np.log(d)))
