"""Dense exterior algebra in fixed small dimension.

Forms of degree k on R^n are stored as coefficient vectors over the
lexicographic basis of strictly increasing index tuples. Coefficients are
either plain scalars (shape (nb,)) or first-order jets (shape (nb, 1+ngrad)):
column 0 the value, columns 1..ngrad the derivatives with respect to the
first `ngrad` coordinates. Jets make the exterior derivative of forms with
coordinate-dependent coefficients a pointwise operation.
"""

import itertools
import math
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError


def perm_sign(seq):
    """Sign of the permutation sorting `seq`; 0 if an index repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    s = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                s = -s
    return s


@lru_cache(maxsize=None)
def basis_tuples(n, deg):
    return tuple(itertools.combinations(range(n), deg))


@lru_cache(maxsize=None)
def basis_index(n, deg):
    return {t: i for i, t in enumerate(basis_tuples(n, deg))}


@lru_cache(maxsize=None)
def _wedge_table(n, da, db):
    """Sparse multiplication table: rows (ia, ib, iout, sign)."""
    outidx = basis_index(n, da + db)
    rows = []
    for ia, ta in enumerate(basis_tuples(n, da)):
        sa = set(ta)
        for ib, tb in enumerate(basis_tuples(n, db)):
            if sa & set(tb):
                continue
            merged = ta + tb
            rows.append((ia, ib, outidx[tuple(sorted(merged))], perm_sign(merged)))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(float)


class Form:
    """A degree-`deg` exterior form on R^`n` with scalar or jet coefficients."""

    def __init__(self, n, deg, coeffs=None, dtype=float):
        self.n = n
        self.deg = deg
        nb = len(basis_tuples(n, deg))
        if coeffs is None:
            self.c = np.zeros(nb, dtype=dtype)
        else:
            c = np.asarray(coeffs)
            if c.shape[0] != nb:
                raise InvalidInputError(f"expected {nb} coefficients for a {deg}-form on R^{n}, got {c.shape}")
            self.c = c.astype(dtype if c.dtype.kind != "c" else c.dtype)

    @property
    def is_jet(self):
        return self.c.ndim == 2

    def copy(self):
        return Form(self.n, self.deg, self.c.copy(), dtype=self.c.dtype)

    def values(self):
        """Plain coefficient values (drops jet gradients)."""
        return self.c[:, 0] if self.is_jet else self.c

    def __add__(self, other):
        _check_compat(self, other)
        return Form(self.n, self.deg, self.c + other.c, dtype=np.result_type(self.c, other.c))

    def __sub__(self, other):
        _check_compat(self, other)
        return Form(self.n, self.deg, self.c - other.c, dtype=np.result_type(self.c, other.c))

    def __mul__(self, scalar):
        return Form(self.n, self.deg, self.c * scalar, dtype=np.result_type(self.c, type(scalar)))

    __rmul__ = __mul__

    def __neg__(self):
        return Form(self.n, self.deg, -self.c, dtype=self.c.dtype)

    def maxabs(self):
        return float(np.abs(self.values()).max()) if self.values().size else 0.0

    def __repr__(self):
        return f"Form(n={self.n}, deg={self.deg})"


def _check_compat(a, b):
    if a.n != b.n or a.deg != b.deg:
        raise InvalidInputError(f"form mismatch: ({a.n},{a.deg}) vs ({b.n},{b.deg})")


def monomial(n, indices, value=1.0, grad=None):
    """value * dx^{i1} ^ ... ^ dx^{ik} as a Form (jet if grad is given)."""
    deg = len(indices)
    sgn = perm_sign(indices)
    if sgn == 0:
        return Form(n, deg)
    key = tuple(sorted(indices))
    if grad is None:
        f = Form(n, deg, dtype=type(value) if isinstance(value, complex) else float)
        f.c[basis_index(n, deg)[key]] = sgn * value
    else:
        grad = np.asarray(grad)
        dtype = complex if (np.iscomplexobj(grad) or isinstance(value, complex)) else float
        f = Form(n, deg)
        f.c = np.zeros((len(basis_tuples(n, deg)), 1 + grad.size), dtype=dtype)
        f.c[basis_index(n, deg)[key], 0] = sgn * value
        f.c[basis_index(n, deg)[key], 1:] = sgn * grad
    return f


def wedge(a, b):
    """Exterior product; jets multiply with the product rule."""
    if a.n != b.n:
        raise InvalidInputError("wedge of forms on different spaces")
    ia, ib, iout, sgn = _wedge_table(a.n, a.deg, b.deg)
    dtype = np.result_type(a.c, b.c)
    out = Form(a.n, a.deg + b.deg, dtype=dtype)
    if a.is_jet or b.is_jet:
        ngrad = (a.c.shape[1] if a.is_jet else b.c.shape[1]) - 1
        ca = a.c if a.is_jet else np.concatenate([a.c[:, None], np.zeros((a.c.shape[0], ngrad), dtype=dtype)], axis=1)
        cb = b.c if b.is_jet else np.concatenate([b.c[:, None], np.zeros((b.c.shape[0], ngrad), dtype=dtype)], axis=1)
        out.c = np.zeros((len(basis_tuples(a.n, a.deg + b.deg)), 1 + ngrad), dtype=dtype)
        vals = ca[ia, 0] * cb[ib, 0]
        grads = ca[ia, 1:] * cb[ib, 0, None] + cb[ib, 1:] * ca[ia, 0, None]
        np.add.at(out.c[:, 0], iout, sgn * vals)
        np.add.at(out.c[:, 1:], iout, sgn[:, None] * grads)
    else:
        np.add.at(out.c, iout, sgn * a.c[ia] * b.c[ib])
    return out


def wedge_all(forms):
    out = forms[0]
    for f in forms[1:]:
        out = wedge(out, f)
    return out


@lru_cache(maxsize=None)
def _interior_table(n, deg):
    """Rows (axis, i_in, i_out, sign) realizing contraction with e_axis."""
    inidx = basis_tuples(n, deg)
    outidx = basis_index(n, deg - 1)
    rows = []
    for i, t in enumerate(inidx):
        for pos, ax in enumerate(t):
            rest = t[:pos] + t[pos + 1 :]
            rows.append((ax, i, outidx[rest], (-1) ** pos))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr


def interior(v, a):
    """Contraction i_v a for a vector v of shape (n,); scalar coefficients only."""
    if a.is_jet:
        raise InvalidInputError("interior product on jet forms is not needed/supported")
    if a.deg == 0:
        raise InvalidInputError("cannot contract a 0-form")
    table = _interior_table(a.n, a.deg)
    out = Form(a.n, a.deg - 1, dtype=np.result_type(a.c, np.asarray(v)))
    np.add.at(out.c, table[:, 2], table[:, 3] * np.asarray(v)[table[:, 0]] * a.c[table[:, 1]])
    return out


def dext(a, ngrad=None):
    """Exterior derivative of a jet form; derivatives run over jet coordinates only."""
    if not a.is_jet:
        raise InvalidInputError("dext requires jet coefficients")
    ng = a.c.shape[1] - 1 if ngrad is None else ngrad
    out = Form(a.n, a.deg + 1, dtype=a.c.dtype)
    outidx = basis_index(a.n, a.deg + 1)
    for i, t in enumerate(basis_tuples(a.n, a.deg)):
        for m in range(ng):
            cm = a.c[i, 1 + m]
            if cm == 0 or m in t:
                continue
            merged = (m,) + t
            out.c[outidx[tuple(sorted(merged))]] += perm_sign(merged) * cm
    return out


def full_tensor(a):
    """Totally antisymmetric dense tensor of shape (n,)*deg from a scalar form."""
    T = np.zeros((a.n,) * a.deg, dtype=a.c.dtype)
    for i, t in enumerate(basis_tuples(a.n, a.deg)):
        if a.c[i] == 0:
            continue
        for perm in itertools.permutations(range(a.deg)):
            T[tuple(t[p] for p in perm)] = perm_sign([t[p] for p in perm]) * a.c[i]
    return T


def norm2(a, g):
    """|a|^2 with respect to metric g: (1/deg!) a_I a_J g^{II'}...g^{JJ'}."""
    T = full_tensor(a)
    ginv = np.linalg.inv(g)
    up = T
    for axis in range(a.deg):
        up = np.tensordot(up, ginv, axes=([0], [0]))
        # tensordot cycles axes; after deg applications order is restored
    return float(np.einsum(up, range(a.deg), T, range(a.deg)) / math.factorial(a.deg))


def hodge(a, g):
    """Hodge star of a scalar-coefficient form with respect to metric g,
    using the orientation of the standard basis."""
    n = a.n
    detg = np.linalg.det(g)
    T = full_tensor(a)
    ginv = np.linalg.inv(g)
    up = T
    for axis in range(a.deg):
        up = np.tensordot(up, ginv, axes=([0], [0]))
    out = Form(n, n - a.deg, dtype=a.c.dtype)
    outidx = basis_index(n, n - a.deg)
    sqd = np.sqrt(detg)
    for tI in basis_tuples(n, a.deg):
        comp = tuple(sorted(set(range(n)) - set(tI)))
        sgn = perm_sign(tI + comp)
        out.c[outidx[comp]] += sqd * sgn * up[tI]
    return out
