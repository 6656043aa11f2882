"""Damped-Newton Dirichlet solver for det(D^2 u) = f and the linearized operator.

Newton runs on log det(D^2 u) - log f (concave in u, scale-free residual).
The linearization at u is w -> sum u^{ij} d_i d_j w with u^{ij} the nodal
inverse Hessian; the same operator assembles the linearized Dirichlet solves.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._kernels import hessian6, sym3_det, sym3_eigvals, sym3_inv
from .errors import (
    ConeViolationError,
    InvalidInputError,
    LinearSolverError,
    NonConvergenceError,
    PositivityError,
)
from .gridfield import (
    INTERIOR,
    GHOST,
    FieldSpace,
    ScalarField,
    SymTensorField,
    row_divergence,
)

DIRECT_SOLVE_MAX = 6000

_STENCILS = {
    (0, 0): [((1, 0, 0), 1.0), ((0, 0, 0), -2.0), ((-1, 0, 0), 1.0)],
    (1, 1): [((0, 1, 0), 1.0), ((0, 0, 0), -2.0), ((0, -1, 0), 1.0)],
    (2, 2): [((0, 0, 1), 1.0), ((0, 0, 0), -2.0), ((0, 0, -1), 1.0)],
    (0, 1): [((1, 1, 0), 0.25), ((-1, -1, 0), 0.25), ((1, -1, 0), -0.25), ((-1, 1, 0), -0.25)],
    (0, 2): [((1, 0, 1), 0.25), ((-1, 0, -1), 0.25), ((1, 0, -1), -0.25), ((-1, 0, 1), -0.25)],
    (1, 2): [((0, 1, 1), 0.25), ((0, -1, -1), 0.25), ((0, 1, -1), -0.25), ((0, -1, 1), -0.25)],
}

_PAIR_OF_COMP = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


class GridOperators:
    """Sparse Hessian-entry operators on a FieldSpace with ghost folding.

    For each packed Hessian component c the operator splits as
        (D_c u)|interior = A_int[c] @ u_int + S_gh[c] @ ghosts,
    and with the Dirichlet extension ghosts = E @ u_int + Wb * g(B):
        D_c = (A_int[c] + S_gh[c] @ E) u_int + S_gh[c] @ (Wb * g(B)).
    """

    def __init__(self, space: FieldSpace):
        self.space = space
        shape = space.grid.shape
        h = space.grid.h
        nflat = int(np.prod(shape))
        pos_int = np.full(nflat, -1, dtype=np.int64)
        pos_int[space._flat_int] = np.arange(space.n_interior)
        pos_gh = np.full(nflat, -1, dtype=np.int64)
        pos_gh[space._flat_ghost] = np.arange(space.n_ghost)

        self._S_int = []
        self._S_gh = []
        idx = space.idx_interior
        for comp, (i, j) in enumerate(_PAIR_OF_COMP):
            scale = 1.0 / (h[i] * h[j])
            ri, ci, vi = [], [], []
            rg, cg, vg = [], [], []
            for off, w in _STENCILS[(i, j)]:
                nb = idx + np.asarray(off, dtype=np.int64)
                flat = np.ravel_multi_index(tuple(nb.T), shape)
                pi = pos_int[flat]
                pg = pos_gh[flat]
                rows = np.arange(space.n_interior)
                mask_i = pi >= 0
                mask_g = pg >= 0
                if not np.all(mask_i | mask_g):
                    bad = int(np.argmax(~(mask_i | mask_g)))
                    raise InvalidInputError(
                        f"stencil for component {comp} leaves the ghost band at interior node {bad}"
                    )
                ri.append(rows[mask_i])
                ci.append(pi[mask_i])
                vi.append(np.full(mask_i.sum(), w * scale))
                rg.append(rows[mask_g])
                cg.append(pg[mask_g])
                vg.append(np.full(mask_g.sum(), w * scale))
            self._S_int.append(
                sp.csr_matrix(
                    (np.concatenate(vi), (np.concatenate(ri), np.concatenate(ci))),
                    shape=(space.n_interior, space.n_interior),
                )
            )
            self._S_gh.append(
                sp.csr_matrix(
                    (np.concatenate(vg), (np.concatenate(rg), np.concatenate(cg))),
                    shape=(space.n_interior, space.n_ghost),
                )
            )
        E, B_pts, Wb = space.extension("dirichlet")
        self.B_pts = B_pts
        self.Wb = Wb
        self.A = [self._S_int[c] + self._S_gh[c] @ E for c in range(6)]
        self._laplacian_spd = None
        self._amg = None

    def boundary_rhs(self, comp, gvals):
        """Affine contribution of Dirichlet data g(B) to Hessian component comp."""
        return self._S_gh[comp] @ (self.Wb * gvals)

    def weighted_operator(self, coeffs):
        """sum_{ij} c_ij d_i d_j with packed nodal coefficients (n, 6);
        off-diagonal components enter twice by symmetry."""
        A = sp.csr_matrix((self.space.n_interior, self.space.n_interior))
        for c in range(6):
            fac = 1.0 if c < 3 else 2.0
            A = A + sp.diags(fac * coeffs[:, c]) @ self.A[c]
        return A.tocsr()

    def weighted_boundary_rhs(self, coeffs, gvals):
        out = np.zeros(self.space.n_interior)
        for c in range(6):
            fac = 1.0 if c < 3 else 2.0
            out += fac * coeffs[:, c] * self.boundary_rhs(c, gvals)
        return out

    def laplacian_preconditioner(self):
        """AMG hierarchy of the homogeneous-Dirichlet 7-point Laplacian."""
        if self._amg is not None:
            return self._amg
        import pyamg

        space = self.space
        shape = space.grid.shape
        h = space.grid.h
        nflat = int(np.prod(shape))
        pos_int = np.full(nflat, -1, dtype=np.int64)
        pos_int[space._flat_int] = np.arange(space.n_interior)
        idx = space.idx_interior
        rows, cols, vals = [], [], []
        diag = np.zeros(space.n_interior)
        for a in range(3):
            for s in (-1, 1):
                nb = idx.copy()
                nb[:, a] += s
                flat = np.ravel_multi_index(tuple(nb.T), shape)
                pi = pos_int[flat]
                mask = pi >= 0
                rows.append(np.arange(space.n_interior)[mask])
                cols.append(pi[mask])
                vals.append(np.full(mask.sum(), -1.0 / h[a] ** 2))
            diag += 2.0 / h[a] ** 2
        L = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(space.n_interior,) * 2,
        ) + sp.diags(diag)
        self._laplacian_spd = L
        self._amg = pyamg.smoothed_aggregation_solver(L, max_coarse=400)
        return self._amg


def solve_linear(ops, A, rhs, tol=1e-11, label="linear solve"):
    """Deterministic sparse solve: direct when small, AMG-preconditioned GMRES else."""
    n = A.shape[0]
    scale = max(1.0, float(np.abs(rhs).max()))
    if n <= DIRECT_SOLVE_MAX:
        x = spla.spsolve(A.tocsc(), rhs)
        res = float(np.abs(A @ x - rhs).max())
        cond_scale = max(scale, float(np.abs(A).sum(axis=1).max()) * max(1.0, float(np.abs(x).max())))
        if not np.isfinite(res) or res > 1e-9 * cond_scale:
            raise LinearSolverError(f"{label}: direct solve residual {res:.3e}", history=[res])
        return x
    ml = ops.laplacian_preconditioner()
    M = ml.aspreconditioner(cycle="V")
    history = []

    def cb(rk):
        history.append(float(rk))

    x, info = spla.gmres(
        A,
        rhs,
        M=M,
        rtol=tol,
        atol=tol * scale,
        restart=60,
        maxiter=4000,
        callback=cb,
        callback_type="pr_norm",
    )
    res = float(np.abs(A @ x - rhs).max())
    if info != 0 or not np.isfinite(res) or res > max(50.0 * tol * scale, 1e-9 * scale):
        raise LinearSolverError(f"{label}: gmres failed (info={info}, rinf={res:.3e})", history=history)
    return x


@dataclass
class MAProblem:
    domain: object
    h: float
    g: object                  # boundary data: callable on boundary points
    f: object = 1.0            # right-hand side: callable or positive constant
    tol: float = 1e-9
    max_iter: int = 30
    damping_floor: float = 1e-8

    def f_values(self, pts):
        if callable(self.f):
            vals = np.asarray(self.f(pts), dtype=float)
        else:
            vals = np.full(len(pts), float(self.f))
        if np.any(vals <= 0.0):
            raise PositivityError("right-hand side must be positive", worst=float(vals.min()))
        return vals


@dataclass
class MASolution:
    u: ScalarField
    hess: SymTensorField
    hessinv_packed: np.ndarray
    residual_norm: float
    newton_iters: int
    convexity_margin: float
    space: FieldSpace
    ops: GridOperators
    gvals: np.ndarray
    history: list = field(default_factory=list)

    def hessinv_field(self):
        return SymTensorField.from_interior(self.space, self.hessinv_packed, extend=True)

    def summary(self):
        return {
            "residual": self.residual_norm,
            "newton_iters": self.newton_iters,
            "convexity_margin": self.convexity_margin,
            "h": float(self.space.grid.h[0]),
            "domain": self.space.domain.kind,
        }


def _quad_seed(pts, c):
    return 0.5 * c * np.sum(pts**2, axis=1)


def ma_solve(problem: MAProblem, space=None, ops=None, initial=None) -> MASolution:
    """Solve the Dirichlet problem for det(D^2 u) = f on the problem domain."""
    space = space or FieldSpace(problem.domain, problem.h)
    ops = ops or GridOperators(space)
    idx = space.idx_interior
    pts = space.interior_points()
    fvec = problem.f_values(pts)
    logf = np.log(fvec)
    gvals = np.asarray(problem.g(ops.B_pts), dtype=float)
    E, _, Wb = space.extension("dirichlet")

    def fill(u_int):
        arr = space.empty_full()
        space.set_interior(arr, u_int)
        space.set_ghost(arr, E @ u_int + Wb * gvals)
        return arr

    def hess_of(u_int):
        return hessian6(fill(u_int), idx, *space.grid.h)

    if initial is not None:
        u_int = np.asarray(initial, dtype=float).copy()
    else:
        # convex quadratic seed plus harmonic carrier of the boundary data
        c = float(np.min(fvec)) ** (1.0 / 3.0)
        A_lap = ops.A[0] + ops.A[1] + ops.A[2]
        gtil = gvals - 0.5 * c * np.sum(ops.B_pts**2, axis=1)
        rhs = -(
            ops.boundary_rhs(0, gtil) + ops.boundary_rhs(1, gtil) + ops.boundary_rhs(2, gtil)
        )
        uh = solve_linear(ops, A_lap, rhs, label="harmonic seed")
        u_int = _quad_seed(pts, c) + uh

    history = []
    H = hess_of(u_int)
    det = sym3_det(H)
    if det.min() <= 0.0 or sym3_eigvals(H)[:, 0].min() <= 0.0:
        # boundary data with strong tangential curvature can leave the carrier
        # seed indefinite near edges; lift it into the cone before the exact phase
        u_int, H, det = _feasibility_phase(ops, hess_of, u_int, logf, problem)
    res_vec = np.log(det) - logf
    res = float(np.abs(res_vec).max())
    history.append(res)
    iters = 0
    while res > problem.tol:
        if iters >= problem.max_iter:
            raise NonConvergenceError(
                f"Newton did not converge in {problem.max_iter} iterations (residual {res:.3e})",
                history=history,
            )
        coeffs = _safeguarded_inverse(H)
        A = ops.weighted_operator(coeffs)
        # inexact inner tolerance tied to the outer residual
        lin_tol = float(np.clip(res * 1e-4, 1e-12, 1e-7))
        delta = solve_linear(ops, A, -res_vec, tol=lin_tol, label="newton step")
        alpha = 1.0
        while True:
            trial = u_int + alpha * delta
            Ht = hessian6(fill(trial), idx, *space.grid.h)
            dt = sym3_det(Ht)
            if dt.min() > 0.0:
                rt = np.log(dt) - logf
                if float(np.abs(rt).max()) < res:
                    u_int, H, res_vec = trial, Ht, rt
                    res = float(np.abs(rt).max())
                    break
            alpha *= 0.5
            if alpha < problem.damping_floor:
                raise NonConvergenceError(
                    f"Newton damping underflow at residual {res:.3e}", history=history
                )
        history.append(res)
        iters += 1

    margin = float(sym3_eigvals(H)[:, 0].min())
    if margin <= 0.0:
        raise ConeViolationError(
            "converged iterate lost convexity", minor_value=margin
        )
    u_field = ScalarField(space, fill(u_int))
    hess_field = SymTensorField.from_interior(space, H, extend=True)
    return MASolution(
        u=u_field,
        hess=hess_field,
        hessinv_packed=sym3_inv(H),
        residual_norm=res,
        newton_iters=iters,
        convexity_margin=margin,
        space=space,
        ops=ops,
        gvals=gvals,
        history=history,
    )


def _feasibility_phase(ops, hess_of, u_int, logf, problem, eps=1e-4, max_iter=80):
    """Drive an indefinite seed into the positive cone.

    Newton steps on the graded residual log(det_reg) - log f with
    det_reg = (det + sqrt(det^2 + eps^2))/2, which stays positive and keeps
    decreasing information through the infeasible region; the step operator
    uses the eigenvalue-clamped inverse Hessian, so it remains elliptic.
    Hands back the first cone-interior iterate.
    """

    def merit(Ht):
        dt = sym3_det(Ht)
        dreg = 0.5 * (dt + np.sqrt(dt * dt + eps * eps))
        r = np.log(dreg) - logf
        feas = bool(dt.min() > 0.0 and sym3_eigvals(Ht)[:, 0].min() > 0.0)
        return float(np.abs(r).max()), r, dt, feas

    H = hess_of(u_int)
    rnorm, r, det, feasible = merit(H)
    for _ in range(max_iter):
        if feasible:
            return u_int, H, det
        coeffs = _safeguarded_inverse(H, floor=1e-2)
        A = ops.weighted_operator(coeffs)
        delta = solve_linear(ops, A, -r, tol=1e-6, label="feasibility step")
        alpha = 1.0
        while True:
            trial = u_int + alpha * delta
            Ht = hess_of(trial)
            rnorm_t, r_t, det_t, feas_t = merit(Ht)
            if feas_t or rnorm_t < rnorm * (1.0 - 1e-4):
                u_int, H, rnorm, r, det, feasible = trial, Ht, rnorm_t, r_t, det_t, feas_t
                break
            alpha *= 0.5
            if alpha < problem.damping_floor:
                raise NonConvergenceError(
                    f"feasibility phase stalled (graded residual {rnorm:.3e})"
                )
    if feasible:
        return u_int, H, det
    raise NonConvergenceError(
        f"feasibility phase did not reach the cone in {max_iter} iterations"
    )


def _safeguarded_inverse(H, floor=1e-8):
    """Inverse Hessian for the Jacobian; eigenvalues clamped to the floor.

    The clamp only affects the Newton direction, never the residual.
    """
    eigs = sym3_eigvals(H)
    bad = eigs[:, 0] < floor
    if not np.any(bad):
        return sym3_inv(H)
    out = sym3_inv(H.copy())
    from .symcone import pack, unpack

    for n in np.flatnonzero(bad):
        S = unpack(H[n])
        w, Q = np.linalg.eigh(S)
        w = np.maximum(w, floor)
        out[n] = pack(Q @ np.diag(1.0 / w) @ Q.T)
    return out


def box_u_apply(sol: MASolution, w: ScalarField, form="nondiv") -> ScalarField:
    """Apply the linearized operator to w in one of its three shapes.

    nondiv: sum u^{ij} d_i d_j w;  div: sum d_i(u^{ij} d_j w);
    divdiv: sum d_i d_j (u^{ij} w). The shapes agree to second order when
    det(D^2 u) is constant.
    """
    space = sol.space
    _check_unit_det(sol)
    if form == "nondiv":
        Hw = hessian6(w.values, space.idx_interior, *space.grid.h)
        c = sol.hessinv_packed
        out = np.sum(c[:, :3] * Hw[:, :3], axis=1) + 2.0 * np.sum(c[:, 3:] * Hw[:, 3:], axis=1)
        return ScalarField.from_interior(space, out)
    hic = sol.hessinv_field()
    if form == "div":
        from .gridfield import _ring1_idx, gradient_at

        idx1 = _ring1_idx(space)
        comp_of = {(0, 0): 0, (1, 1): 1, (2, 2): 2, (0, 1): 3, (1, 0): 3, (0, 2): 4, (2, 0): 4, (1, 2): 5, (2, 1): 5}
        gw = gradient_at(w.values, space, idx1)
        acc = np.zeros(space.n_interior)
        qs = []
        for i in range(3):
            qi = np.zeros(len(idx1))
            for j in range(3):
                qi += hic.values[idx1[:, 0], idx1[:, 1], idx1[:, 2], comp_of[(i, j)]] * gw[:, j]
            arr = np.full(space.grid.shape, np.nan)
            arr[tuple(idx1.T)] = qi
            qs.append(arr)
        for i in range(3):
            acc += gradient_at(qs[i], space, space.idx_interior)[:, i]
        return ScalarField.from_interior(space, acc)
    if form == "divdiv":
        acc = np.zeros(space.n_interior)
        for c in range(6):
            prod = hic.values[..., c] * w.values
            Hp = hessian6(prod, space.idx_interior, *space.grid.h)
            acc += (1.0 if c < 3 else 2.0) * Hp[:, c]
        return ScalarField.from_interior(space, acc)
    raise InvalidInputError(f"unknown form {form!r}")


def _check_unit_det(sol, tol=1e-6):
    det = sym3_det(np.ascontiguousarray(sol.hess.interior_packed()))
    err = float(np.abs(det - 1.0).max())
    if err > tol:
        raise InvalidInputError(
            f"linearized-operator shapes need det(D^2 u) = 1; deviation {err:.3e}"
        )


def box_u_solve(sol: MASolution, b, tol=1e-10) -> ScalarField:
    """Dirichlet solve of the linearized equation (nondiv shape) with data b."""
    ops = sol.ops
    space = sol.space
    bvals = np.asarray(b(ops.B_pts), dtype=float) if callable(b) else np.asarray(b, dtype=float)
    coeffs = sol.hessinv_packed
    A = ops.weighted_operator(coeffs)
    rhs = -ops.weighted_boundary_rhs(coeffs, bvals)
    v = solve_linear(ops, A, rhs, tol=tol, label="linearized dirichlet")
    res = float(np.abs(A @ v - rhs).max())
    scale = max(1.0, float(np.abs(rhs).max()))
    if res > tol * scale:
        raise LinearSolverError(f"linearized solve residual {res:.3e}", history=[res])
    arr = space.empty_full()
    space.set_interior(arr, v)
    E, _, Wb = space.extension("dirichlet")
    space.set_ghost(arr, E @ v + Wb * bvals)
    return ScalarField(space, arr)


def prolong_solution(coarse: MASolution, fine_space) -> np.ndarray:
    """Interior vector on a finer space interpolated from a coarse solution;
    the standard warm start for grid-continuation sweeps. Quadratic blocks
    keep the prolonged Hessian close to the coarse one, so the warm start
    stays inside the cone."""
    from .gridfield import interp_quadratic

    return interp_quadratic(coarse.space, coarse.u.values, fine_space.interior_points())


def cofactor_identity_residual(sol: MASolution) -> float:
    """max_j || sum_i d_i u^{ij} ||_inf; zero exactly for constant Hessians."""
    w = row_divergence(sol.hessinv_field())
    out = 0.0
    for j in range(3):
        vals = sol.space.get_interior(w[j])
        out = max(out, float(np.abs(vals).max()))
    return out
