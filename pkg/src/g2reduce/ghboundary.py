"""Reduced boundary-value machinery over a 3D convex base.

A closed invariant structure over the base is a cone-valued symmetric matrix
field sigma with vanishing double divergence; its boundary trace is carried
by a layer current

    L(f) = int_Sigma (grad_v f) theta1 + f theta2,     theta1 > 0,

stored canonically with v the unit outward normal and the 2-forms as scalar
densities against the Euclidean surface measure. The volume functional
int det(sigma)^{1/3}, its dual bound through convex unit-determinant
potentials, and the constructive critical point on strictly convex domains
live here.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import sym3_det, sym3_eigvals
from .errors import InvalidInputError, PositivityError
from .gridfield import (
    FieldSpace,
    ScalarField,
    SurfaceQuadrature,
    SymTensorField,
    _ring1_idx,
    double_div,
    extract_at_surface,
    gradient_at,
    row_divergence,
    surface_integrate,
    trilinear,
)
from .masolver import MAProblem, MASolution, box_u_apply, box_u_solve, ma_solve

_COMP_OF = {
    (0, 0): 0, (1, 1): 1, (2, 2): 2,
    (0, 1): 3, (1, 0): 3, (0, 2): 4, (2, 0): 4, (1, 2): 5, (2, 1): 5,
}


@dataclass
class SigmaField:
    """Cone-valued matrix field with its constraint diagnostics."""

    tensor: SymTensorField
    constraint_residual: float
    meta: dict

    @property
    def space(self):
        return self.tensor.space


def assemble_sigma(u_sol: MASolution, V: ScalarField, lin_tol=1e-8) -> SigmaField:
    """sigma^{ij} = V u^{ij} from a unit-determinant potential and a positive
    solution of the linearized equation."""
    space = u_sol.space
    vint = V.interior_vec()
    vfull = V.values
    finite = np.isfinite(vfull)
    if float(vint.min()) <= 0.0 or float(vfull[finite].min()) <= 0.0:
        k = int(np.argmin(vint))
        raise PositivityError(
            "V must be positive on the closed domain",
            worst=float(vint.min()),
            where=tuple(int(t) for t in space.idx_interior[k]),
        )
    lin_res = float(np.abs(box_u_apply(u_sol, V, "nondiv").interior_vec()).max())
    if lin_res > lin_tol:
        raise InvalidInputError(
            f"V does not satisfy the linearized equation: residual {lin_res:.3e} > {lin_tol:.1e}"
        )
    hinv = u_sol.hessinv_field()
    arr = np.full(space.grid.shape + (6,), np.nan)
    for c in range(6):
        arr[..., c] = vfull * hinv.values[..., c]
    tensor = SymTensorField(space, arr)
    constraint = float(np.abs(double_div(tensor).interior_vec()).max())

    # normalized inverse against the Hessian of the potential
    det_sig = sym3_det(np.ascontiguousarray(tensor.interior_packed()))
    hess = u_sol.hess.interior_packed()
    lam = hess / vint[:, None] * np.cbrt(det_sig)[:, None]
    lam_dev = float(np.abs(lam - hess).max())
    return SigmaField(
        tensor=tensor,
        constraint_residual=constraint,
        meta={"linearized_residual": lin_res, "lambda_vs_hessian": lam_dev},
    )


def sigma_from_tensor(tensor: SymTensorField) -> SigmaField:
    """Wrap an explicitly supplied matrix field (tests and file input)."""
    constraint = float(np.abs(double_div(tensor).interior_vec()).max())
    return SigmaField(tensor=tensor, constraint_residual=constraint, meta={})


def curvature(sigma: SigmaField):
    """Connection curvature components F^i = -sum_j d_j sigma^{ij} and the
    closure residual ||sum_i d_i F^i||_inf (the constraint residual again)."""
    space = sigma.space
    w = row_divergence(sigma.tensor)
    fields = []
    for i in range(3):
        fields.append(ScalarField(space, -w[i]))
    acc = np.zeros(space.n_interior)
    for i in range(3):
        acc += gradient_at(fields[i].values, space, space.idx_interior)[:, i]
    closure = float(np.abs(acc).max())
    return fields, closure


def volume(sigma: SigmaField) -> float:
    """Integral of det(sigma)^{1/3} over the domain."""
    space = sigma.space
    packed = np.ascontiguousarray(sigma.tensor.interior_packed())
    eigs = sym3_eigvals(packed)
    if float(eigs[:, 0].min()) <= 0.0:
        k = int(np.argmin(eigs[:, 0]))
        raise PositivityError(
            "sigma left the positive cone",
            worst=float(eigs[:, 0].min()),
            where=tuple(int(t) for t in space.idx_interior[k]),
        )
    det_full = sigma.tensor.det_field()
    integrand = np.where(np.isfinite(det_full) & (det_full > 0.0), np.cbrt(np.abs(det_full)), np.nan)
    return space.integrate(integrand)


# -------------------------------------------------------------- layer currents


@dataclass
class LayerCurrent:
    """Boundary functional data at surface-quadrature samples."""

    quad: SurfaceQuadrature
    theta1: np.ndarray
    theta2: np.ndarray
    v: np.ndarray        # transversal field; canonical when equal to the normals
    canonical: bool = True

    def __post_init__(self):
        if np.any(self.theta1 <= 0.0):
            k = int(np.argmin(self.theta1))
            raise PositivityError(
                "layer current needs theta1 > 0", worst=float(self.theta1.min()), where=k
            )
        vdotn = np.sum(self.v * self.quad.normals, axis=1)
        if np.any(vdotn <= 0.0):
            raise PositivityError("transversal field must point outward", worst=float(vdotn.min()))

    def primary_invariant(self):
        """Density of the reparametrization invariant: (v . n) theta1."""
        return np.sum(self.v * self.quad.normals, axis=1) * self.theta1


def layer_current_eval(L: LayerCurrent, f_vals, dn_vals, grads=None) -> float:
    """L(f) from sample values of f and its outward normal derivative
    (full gradients required for non-canonical transversal fields)."""
    f_vals = np.asarray(f_vals, dtype=float)
    dn_vals = np.asarray(dn_vals, dtype=float) if dn_vals is not None else None
    if f_vals.shape != L.theta1.shape:
        raise InvalidInputError("sample count mismatch in layer-current evaluation")
    if L.canonical:
        if dn_vals is None:
            raise InvalidInputError("canonical evaluation needs normal derivatives")
        dv = dn_vals
    else:
        if grads is None:
            raise InvalidInputError("non-canonical evaluation needs full gradients")
        dv = np.sum(np.asarray(grads, dtype=float) * L.v, axis=1)
    return surface_integrate(L.quad, L.theta1 * dv + L.theta2 * f_vals)


def _box_face_blocks(quad: SurfaceQuadrature):
    """Slices and lattice shapes of the per-face sample blocks."""
    blocks = []
    start = 0
    for fid in range(6):
        mask = quad.face_id == fid
        n = int(mask.sum())
        if n == 0:
            continue
        idx = np.flatnonzero(mask)
        axis = fid // 2
        others = [b for b in range(3) if b != axis]
        c0 = np.unique(quad.points[idx][:, others[0]])
        c1 = np.unique(quad.points[idx][:, others[1]])
        blocks.append((fid, idx, (len(c0), len(c1)), others))
        start += n
    return blocks


def _face_divergence(vals0, vals1, h0, h1):
    """2D divergence on a face lattice: central inside, one-sided second order
    at the face edges."""

    def d(axisvals, h, axis):
        out = np.empty_like(axisvals)
        sl = [slice(None), slice(None)]

        def at(i):
            s = sl.copy()
            s[axis] = i
            return tuple(s)

        out[at(slice(1, -1))] = (axisvals[at(slice(2, None))] - axisvals[at(slice(0, -2))]) / (2 * h)
        out[at(0)] = (-3 * axisvals[at(0)] + 4 * axisvals[at(1)] - axisvals[at(2)]) / (2 * h)
        out[at(-1)] = (3 * axisvals[at(-1)] - 4 * axisvals[at(-2)] + axisvals[at(-3)]) / (2 * h)
        return out

    return d(vals0, h0, 0) + d(vals1, h1, 1)


def surface_divergence(space: FieldSpace, quad: SurfaceQuadrature, tangent_vecs) -> np.ndarray:
    """Discrete surface divergence of a tangential sample field.

    Box faces use lattice differences; sphere samples differentiate a smooth
    ambient extension supplied as a callable (see layer_current_from_sigma)
    and are not supported for raw sample data.
    """
    t = np.asarray(tangent_vecs, dtype=float)
    if space.domain.kind != "box":
        raise InvalidInputError("sample-data surface divergence is lattice-only (box faces)")
    out = np.zeros(len(quad))
    h = space.grid.h
    for fid, idx, shape, others in _box_face_blocks(quad):
        comp0 = t[idx, others[0]].reshape(shape, order="F")
        comp1 = t[idx, others[1]].reshape(shape, order="F")
        div = _face_divergence(comp0, comp1, h[others[0]], h[others[1]])
        out[idx] = div.ravel(order="F")
    return out


def layer_current_from_sigma(sigma: SigmaField) -> LayerCurrent:
    """Canonical boundary trace of sigma.

    theta1 is the normal-normal component; theta2 collects the surface
    divergence of the tangential part of sigma.n together with the normal
    component of the row divergence, matching the volume-boundary pairing
        int sigma : D^2 f - int (ddiv sigma) f = L_sigma(f)
    to second order.
    """
    space = sigma.space
    quad = space.surface_quadrature()
    n = quad.normals
    vals = np.stack(
        [extract_at_surface(space, sigma.tensor.values[..., c], quad.points, n) for c in range(6)],
        axis=1,
    )

    def mat(vals6):
        S = np.empty((len(vals6), 3, 3))
        for (i, j), c in _COMP_OF.items():
            S[:, i, j] = vals6[:, c]
        return S

    S = mat(vals)
    sn = np.einsum("mij,mj->mi", S, n)
    theta1 = np.einsum("mi,mi->m", sn, n)
    if np.any(theta1 <= 0.0):
        k = int(np.argmin(theta1))
        raise PositivityError(
            "sigma is not in the cone at the boundary (theta1 <= 0)",
            worst=float(theta1.min()),
            where=k,
        )
    tang = sn - theta1[:, None] * n

    w = row_divergence(sigma.tensor)
    divs_n = np.zeros(len(quad))
    for j in range(3):
        divs_n += extract_at_surface(space, w[j], quad.points, n) * n[:, j]

    if space.domain.kind == "box":
        divt = surface_divergence(space, quad, tang)
    else:
        divt = _sphere_tangential_divergence(space, sigma.tensor, quad)
    theta2 = -divt - divs_n
    return LayerCurrent(quad=quad, theta1=theta1, theta2=theta2, v=n.copy(), canonical=True)


def _sphere_tangential_divergence(space, tensor, quad):
    """Trace over the tangent plane of the ambient Jacobian of the extended
    tangential field t(x) = P_T(x) sigma(x) nhat(x)."""
    c = space.domain.center
    delta = 0.5 * float(np.max(space.grid.h))

    def tfield(pts):
        nhat = pts - c
        nhat = nhat / np.linalg.norm(nhat, axis=1, keepdims=True)
        comps = np.stack([trilinear(space, tensor.values[..., k], pts) for k in range(6)], axis=1)
        S = np.empty((len(pts), 3, 3))
        for (i, j), k in _COMP_OF.items():
            S[:, i, j] = comps[:, k]
        sn = np.einsum("mij,mj->mi", S, nhat)
        return sn - np.einsum("mi,mi->m", sn, nhat)[:, None] * nhat

    n = quad.normals
    # orthonormal tangent frame, deterministic
    ref = np.zeros_like(n)
    ref[:, np.argmin(np.abs(n).mean(axis=0))] = 1.0
    smallest = np.argmin(np.abs(n), axis=1)
    ref = np.zeros_like(n)
    ref[np.arange(len(n)), smallest] = 1.0
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    out = np.zeros(len(quad))
    for e in (e1, e2):
        tp = tfield(quad.points + delta * e)
        tm = tfield(quad.points - delta * e)
        out += np.einsum("mi,mi->m", e, (tp - tm) / (2.0 * delta))
    return out


def reparametrize_current(L: LayerCurrent, g_vals=None, w_vecs=None, tol=1e-12) -> LayerCurrent:
    """Re-express the same current with scaled theta1 and a shifted transversal.

    Positive scaling g sends (theta1, theta2, v) to (g theta1, theta2, v/g)
    exactly; a tangential shift w moves v to v + w and pays for it inside
    theta2 with the surface divergence of (g theta1) w. Tangential shifts use
    the face-lattice divergence, so they require a box quadrature.
    """
    theta1, theta2, v = L.theta1.copy(), L.theta2.copy(), L.v.copy()
    quad = L.quad
    if g_vals is not None:
        g_vals = np.asarray(g_vals, dtype=float)
        if np.any(g_vals <= 0.0):
            raise PositivityError("scaling must be positive", worst=float(g_vals.min()))
        theta1 = g_vals * theta1
        v = v / g_vals[:, None]
    if w_vecs is not None:
        w_vecs = np.asarray(w_vecs, dtype=float)
        wn = np.abs(np.sum(w_vecs * quad.normals, axis=1))
        if float(wn.max()) > tol:
            raise InvalidInputError(f"shift is not tangential: max |w.n| = {wn.max():.2e}")
        # find the space through the quadrature owner; box-only lattice op
        space = getattr(quad, "_space", None)
        if space is None:
            raise InvalidInputError("tangential shifts need a lattice-owning quadrature")
        theta2 = theta2 + surface_divergence(space, quad, theta1[:, None] * w_vecs)
        v = v + w_vecs
    canonical = bool(np.allclose(v, quad.normals, atol=1e-14) )
    return LayerCurrent(quad=quad, theta1=theta1, theta2=theta2, v=v, canonical=canonical)


# ---------------------------------------------------------------- dual bound


@dataclass
class DualGapReport:
    vol: float
    dual_value: float
    gap: float
    amgm_min_slack: float
    constraint_residual: float

    def summary(self):
        return {
            "vol": self.vol,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "amgm_min_slack": self.amgm_min_slack,
            "constraint_residual": self.constraint_residual,
        }


def dual_gap(sigma: SigmaField, L: LayerCurrent, f_vals, dn_vals, f_hess_packed) -> DualGapReport:
    """(1/3) L_sigma(f) - Vol(sigma) for a convex unit-determinant potential f.

    Also certifies the pointwise mean bound det(sigma)^{1/3} <= (1/3) sigma : D^2 f
    at every interior node (pure matrix algebra, no discretization error).
    """
    fh = np.ascontiguousarray(np.asarray(f_hess_packed, dtype=float))
    eigs = sym3_eigvals(fh)
    if float(eigs[:, 0].min()) <= 0.0:
        raise PositivityError("dual potential is not convex", worst=float(eigs[:, 0].min()))
    packed = np.ascontiguousarray(sigma.tensor.interior_packed())
    lhs = np.cbrt(sym3_det(packed))
    pair = np.sum(packed[:, :3] * fh[:, :3], axis=1) + 2.0 * np.sum(packed[:, 3:] * fh[:, 3:], axis=1)
    slack = pair / 3.0 - lhs
    vol = volume(sigma)
    lf = layer_current_eval(L, f_vals, dn_vals)
    return DualGapReport(
        vol=vol,
        dual_value=lf / 3.0,
        gap=lf / 3.0 - vol,
        amgm_min_slack=float(slack.min()),
        constraint_residual=sigma.constraint_residual,
    )


# ----------------------------------------------------- constructive pipeline


@dataclass
class ProblemIResult:
    sigma: SigmaField
    u_sol: MASolution
    V: ScalarField
    current: LayerCurrent
    vol: float
    min_V: float
    primary_invariant_error: float

    def summary(self):
        return {
            "vol": self.vol,
            "min_V": self.min_V,
            "primary_invariant_error": self.primary_invariant_error,
            "constraint_residual": self.sigma.constraint_residual,
            "newton_iters": self.u_sol.newton_iters,
            "ma_residual": self.u_sol.residual_norm,
        }


def solve_problem_I(domain, H, h, tol=1e-9) -> ProblemIResult:
    """Critical point of the volume functional with prescribed normal-normal
    boundary density H on a strictly convex (ball) domain.

    Stages: unit-determinant potential with zero boundary values; Dirichlet
    data H / (u^{ij} n_i n_j) for the linearized equation; sigma = V u^{ij}.
    """
    if domain.kind != "ball":
        raise InvalidInputError("the constructive pipeline needs a strictly convex (ball) domain")
    prob = MAProblem(domain=domain, h=h, g=lambda p: np.zeros(len(p)), f=1.0, tol=tol)
    u_sol = ma_solve(prob)
    space = u_sol.space
    hinv = u_sol.hessinv_field()

    def vdata(pts):
        pts = np.atleast_2d(pts)
        n = domain.outward_normal(pts)
        denom = np.zeros(len(pts))
        for (i, j), c in _COMP_OF.items():
            denom += extract_at_surface(space, hinv.values[..., c], pts, n) * n[:, i] * n[:, j]
        hvals = np.asarray(H(pts), dtype=float)
        if np.any(hvals <= 0.0):
            raise PositivityError("boundary density must be positive", worst=float(hvals.min()))
        return hvals / denom

    V = box_u_solve(u_sol, vdata)
    vint = V.interior_vec()
    if float(vint.min()) <= 0.0:
        k = int(np.argmin(vint))
        raise PositivityError(
            "pipeline produced a nonpositive conformal factor",
            worst=float(vint.min()),
            where=tuple(int(t) for t in space.idx_interior[k]),
        )
    sigma = assemble_sigma(u_sol, V)
    current = layer_current_from_sigma(sigma)
    hq = np.asarray(H(current.quad.points), dtype=float)
    pi_err = float(np.abs(current.primary_invariant() - hq).max())
    return ProblemIResult(
        sigma=sigma,
        u_sol=u_sol,
        V=V,
        current=current,
        vol=volume(sigma),
        min_V=float(vint.min()),
        primary_invariant_error=pi_err,
    )


# ------------------------------------------------------ admissible variations


@dataclass
class VariationGenerator:
    """Compactly supported tensor, skew in its first index pair, whose row
    divergence produces admissible volume variations."""

    space: FieldSpace
    hblock: np.ndarray  # (n_interior, 3, 3): skew pair (01, 02, 12) x last index

    PAIRS = ((0, 1), (0, 2), (1, 2))

    def component(self, i, a, j):
        """h^{iaj} as an interior vector (skew in (i, a))."""
        if i == a:
            return np.zeros(self.space.n_interior)
        sign = 1.0
        if i > a:
            i, a = a, i
            sign = -1.0
        p = self.PAIRS.index((i, a))
        return sign * self.hblock[:, p, j]


def interior_support_mask(space: FieldSpace, margin_cells=2):
    """Interior nodes at least margin_cells * h away from the boundary."""
    pts = space.interior_points()
    h = float(np.max(space.grid.h))
    if space.domain.kind == "box":
        lo = space.domain.lo + margin_cells * h
        hi = space.domain.hi - margin_cells * h
        return np.all((pts > lo) & (pts < hi), axis=1)
    r = np.linalg.norm(pts - space.domain.center, axis=1)
    return r < space.domain.radius - margin_cells * h


def make_variation_generator(space: FieldSpace, rng, margin_cells=3) -> VariationGenerator:
    """Smooth random compactly-supported generator (deterministic in rng)."""
    pts = space.interior_points()
    h = float(np.max(space.grid.h))
    if space.domain.kind == "box":
        lo = space.domain.lo + margin_cells * h
        hi = space.domain.hi - margin_cells * h
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        s = np.clip((pts - mid) / half, -1.0, 1.0)
        window = np.prod(np.cos(0.5 * math.pi * s) ** 2, axis=1)
        inside = np.all(np.abs(pts - mid) < half, axis=1)
    else:
        rmax = space.domain.radius - margin_cells * h
        r = np.linalg.norm(pts - space.domain.center, axis=1)
        window = np.cos(0.5 * math.pi * np.clip(r / rmax, 0.0, 1.0)) ** 2
        inside = r < rmax
    window = np.where(inside, window, 0.0)
    hblock = np.zeros((space.n_interior, 3, 3))
    for p in range(3):
        for j in range(3):
            c = rng.standard_normal(4)
            mod = c[0] + c[1] * pts[:, 0] + c[2] * np.sin(2.0 * pts[:, 1]) + c[3] * pts[:, 2] ** 2
            hblock[:, p, j] = window * mod
    return VariationGenerator(space=space, hblock=hblock)


def tau_from_generator(gen: VariationGenerator) -> SymTensorField:
    """tau^{ij} = d_a h^{iaj} + d_a h^{jai}; double-divergence-free to
    second order and supported away from the boundary."""
    space = gen.space
    if not np.all(gen.hblock[~interior_support_mask(space, 2)] == 0.0):
        raise InvalidInputError("generator support touches the boundary margin")
    full = {}
    for i in range(3):
        for a in range(3):
            for j in range(3):
                if i == a:
                    continue
                arr = np.full(space.grid.shape, 0.0)
                space.set_interior(arr, gen.component(i, a, j))
                full[(i, a, j)] = arr
    packed = np.zeros((space.n_interior, 6))
    for (i, j), c in [((0, 0), 0), ((1, 1), 1), ((2, 2), 2), ((0, 1), 3), ((0, 2), 4), ((1, 2), 5)]:
        acc = np.zeros(space.n_interior)
        for a in range(3):
            if a != i:
                acc += gradient_at(full[(i, a, j)], space, space.idx_interior)[:, a]
            if a != j:
                acc += gradient_at(full[(j, a, i)], space, space.idx_interior)[:, a]
        packed[:, c] = acc
    return SymTensorField.from_interior(space, packed, extend=True)


def tau_norm1(space: FieldSpace, tau: SymTensorField) -> float:
    """Entrywise L1 volume norm, off-diagonal entries counted twice."""
    packed = tau.interior_packed()
    cellvol = float(np.prod(space.grid.h))
    return cellvol * float(
        np.sum(np.abs(packed[:, :3])) + 2.0 * np.sum(np.abs(packed[:, 3:]))
    )


def criticality_residual(u_sol: MASolution, gen: VariationGenerator):
    """|int u_{ij} tau^{ij}| for an admissible variation; near zero at the
    constructed critical point. Returns (residual, tau 1-norm)."""
    space = u_sol.space
    tau = tau_from_generator(gen)
    packed = tau.interior_packed()
    hess = u_sol.hess.interior_packed()
    cellvol = float(np.prod(space.grid.h))
    pairing = np.sum(packed[:, :3] * hess[:, :3], axis=1) + 2.0 * np.sum(
        packed[:, 3:] * hess[:, 3:], axis=1
    )
    return abs(cellvol * float(np.sum(pairing))), tau_norm1(space, tau)


def convex_positivity_check(L: LayerCurrent, domain, trials, rng):
    """Evaluate the current on random convex quadratics; reports the values
    and the most negative one (a valid boundary trace stays nonnegative up to
    the discretization error)."""
    pts = L.quad.points
    n = L.quad.normals
    lo, hi = domain.bbox()
    values = []
    for _ in range(trials):
        a = lo + (hi - lo) * (0.25 + 0.5 * rng.random(3))
        Q = rng.standard_normal((3, 3)) * 0.5
        P = Q.T @ Q + 0.05 * np.eye(3)
        fv = np.einsum("mi,ij,mj->m", pts - a, P, pts - a)
        gv = 2.0 * np.einsum("ij,mj->mi", P, pts - a)
        dn = np.sum(gv * n, axis=1)
        values.append(layer_current_eval(L, fv, dn))
    values = np.asarray(values)
    return {
        "min_value": float(values.min()),
        "values": values,
        "violation": bool(values.min() < -1e-6 * max(1.0, float(np.abs(values).max()))),
    }


def eq_boundary_identity_residual(sigma: SigmaField, L: LayerCurrent, f, grad_f, hess_f):
    """Residual of the volume-boundary pairing for one smooth test function:
    int sigma : D^2 f - int (ddiv sigma) f - L_sigma(f)."""
    space = sigma.space
    ffield = ScalarField.from_callable(space, f)
    Hf = np.ascontiguousarray(
        np.stack([hess_f(space.interior_points())[:, c] for c in range(6)], axis=1)
    )
    packed = sigma.tensor.interior_packed()
    pair = np.sum(packed[:, :3] * Hf[:, :3], axis=1) + 2.0 * np.sum(packed[:, 3:] * Hf[:, 3:], axis=1)
    pair_field = ScalarField.from_interior(space, pair, ghost="extrapolate")
    vol_term = space.integrate(pair_field.values)
    dd = double_div(sigma.tensor).interior_vec()
    prod = dd * ffield.interior_vec()
    prod_field = ScalarField.from_interior(space, prod, ghost="extrapolate")
    dd_term = space.integrate(prod_field.values)
    fq = f(L.quad.points)
    dnq = np.sum(grad_f(L.quad.points) * L.quad.normals, axis=1)
    return float(vol_term - dd_term - layer_current_eval(L, fq, dnq))
