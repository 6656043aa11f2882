"""Structured cell-centered grids on convex domains with ghost extension.

Nodes are cell centers of a uniform lattice covering the domain's bounding
box plus a two-cell margin. Each node is interior (strictly inside the
domain), ghost (outside but within two axis steps of an interior node, in the
reach of the second-order stencils), or exterior (never read; NaN sentinel).

Ghost values are produced by one-dimensional cubic extrapolation along a
lattice direction pointing into the domain (with quadratic/linear fallbacks
where the line runs out of interior nodes). In Dirichlet mode the polynomial
passes through the boundary-crossing value, which keeps the interior scheme
second order with clean error constants and makes it exact on quadratics; in
extrapolation mode it uses interior nodes only (for extending derived fields
outward).

Vector layouts are deterministic: x1 varies fastest, then x2, then x3.
"""

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._kernels import grad3, hessian6, sym3_det, sym3_eigvals, sym3_inv
from .errors import InvalidInputError, PositivityError, StencilError

INTERIOR, GHOST, EXTERIOR = 1, 2, 0

MARGIN = 2  # ghost cells per side

# offsets with manhattan norm <= 2: the reach of the compact second-order stencils
_BAND_OFFSETS = [
    (i, j, k)
    for i in range(-2, 3)
    for j in range(-2, 3)
    for k in range(-2, 3)
    if 0 < abs(i) + abs(j) + abs(k) <= 2
]

_DIAG_DIRECTIONS = [
    (i, j, k)
    for i in (-1, 0, 1)
    for j in (-1, 0, 1)
    for k in (-1, 0, 1)
    if (i, j, k) != (0, 0, 0)
]


class ConvexDomain:
    """Axis-aligned box or round ball in R^3."""

    def __init__(self, kind, lo=None, hi=None, center=None, radius=None):
        self.kind = kind
        if kind == "box":
            self.lo = np.asarray(lo, dtype=float)
            self.hi = np.asarray(hi, dtype=float)
            if not np.all(self.hi > self.lo):
                raise InvalidInputError("box needs hi > lo on every axis")
        elif kind == "ball":
            self.center = np.asarray(center, dtype=float)
            self.radius = float(radius)
            if not self.radius > 0.0:
                raise InvalidInputError("ball needs positive radius")
        else:
            raise InvalidInputError(f"unknown domain kind {kind!r}")

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", center=center, radius=radius)

    def bbox(self):
        if self.kind == "box":
            return self.lo, self.hi
        r = self.radius
        return self.center - r, self.center + r

    def contains(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "box":
            return np.all((pts > self.lo) & (pts < self.hi), axis=1)
        return np.sum((pts - self.center) ** 2, axis=1) < self.radius**2

    def volume(self):
        if self.kind == "box":
            return float(np.prod(self.hi - self.lo))
        return 4.0 / 3.0 * math.pi * self.radius**3

    def surface_area(self):
        if self.kind == "box":
            d = self.hi - self.lo
            return 2.0 * float(d[0] * d[1] + d[0] * d[2] + d[1] * d[2])
        return 4.0 * math.pi * self.radius**2

    def crossing(self, p_out, p_in):
        """t in (0, 1] with p_out + t (p_in - p_out) on the boundary."""
        p_out = np.asarray(p_out, dtype=float)
        d = np.asarray(p_in, dtype=float) - p_out
        if self.kind == "ball":
            q = p_out - self.center
            a = d @ d
            b = 2.0 * q @ d
            c = q @ q - self.radius**2
            disc = b * b - 4.0 * a * c
            if disc < 0.0:
                raise StencilError("segment does not cross the sphere")
            t = (-b - math.sqrt(disc)) / (2.0 * a)
            if not 0.0 < t <= 1.0 + 1e-12:
                t = (-b + math.sqrt(disc)) / (2.0 * a)
            return float(min(max(t, 1e-15), 1.0))
        # box: entry time of the slab intersection
        t_enter = 0.0
        for a in range(3):
            if d[a] > 0 and p_out[a] <= self.lo[a]:
                t_enter = max(t_enter, (self.lo[a] - p_out[a]) / d[a])
            elif d[a] < 0 and p_out[a] >= self.hi[a]:
                t_enter = max(t_enter, (self.hi[a] - p_out[a]) / d[a])
        if t_enter <= 0.0 or t_enter > 1.0 + 1e-12:
            raise StencilError("segment does not cross the box boundary")
        return float(min(t_enter, 1.0))

    def outward_normal(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "ball":
            v = pts - self.center
            return v / np.linalg.norm(v, axis=1, keepdims=True)
        n = np.zeros_like(pts)
        for a in range(3):
            n[np.abs(pts[:, a] - self.lo[a]) < 1e-12, a] = -1.0
            n[np.abs(pts[:, a] - self.hi[a]) < 1e-12, a] = 1.0
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise InvalidInputError("point is not on a box face")
        return n / norms


@dataclass
class Grid3:
    """Uniform cell-centered lattice; node (i,j,k) sits at origin + idx*h."""

    origin: np.ndarray
    h: np.ndarray
    shape: tuple

    def axes(self):
        return [self.origin[a] + self.h[a] * np.arange(self.shape[a]) for a in range(3)]

    def node_coords(self, idx):
        return self.origin + np.asarray(idx, dtype=float) * self.h


def make_grid(domain, h):
    """Lattice covering the domain bounding box plus the ghost margin."""
    h = np.asarray(h, dtype=float) * np.ones(3)
    lo, hi = domain.bbox()
    ncells = []
    for a in range(3):
        n = (hi[a] - lo[a]) / h[a]
        n_round = int(round(n))
        if domain.kind == "box":
            if abs(n - n_round) > 1e-9 * max(1.0, n):
                raise InvalidInputError(
                    f"box extent on axis {a} is not an integer number of cells: {n}"
                )
            ncells.append(n_round)
        else:
            # even cell count keeps lattice nodes off the sphere
            m = int(math.ceil(n - 1e-12))
            ncells.append(m + (m % 2))
    shape = tuple(nc + 2 * MARGIN for nc in ncells)
    center = 0.5 * (np.asarray(lo) + np.asarray(hi))
    origin = np.array(
        [center[a] - (shape[a] - 1) / 2.0 * h[a] for a in range(3)]
    )
    return Grid3(origin=origin, h=h, shape=shape)


def _classify(domain, grid):
    xs = grid.axes()
    X, Y, Z = np.meshgrid(*xs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    inside = domain.contains(pts).reshape(grid.shape)
    labels = np.full(grid.shape, EXTERIOR, dtype=np.int8)
    labels[inside] = INTERIOR
    ghost = np.zeros(grid.shape, dtype=bool)
    for off in _BAND_OFFSETS:
        shifted = _shift_bool(inside, off)
        ghost |= shifted
    ghost &= ~inside
    labels[ghost] = GHOST
    return labels


def _shift_bool(mask, off):
    out = np.zeros_like(mask)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    for a, o in enumerate(off):
        if o > 0:
            src[a] = slice(0, mask.shape[a] - o)
            dst[a] = slice(o, mask.shape[a])
        elif o < 0:
            src[a] = slice(-o, mask.shape[a])
            dst[a] = slice(0, mask.shape[a] + o)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def _lagrange_weights(nodes, x):
    nodes = np.asarray(nodes, dtype=float)
    w = np.ones(len(nodes))
    for i in range(len(nodes)):
        for j in range(len(nodes)):
            if i != j:
                w[i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return w


class FieldSpace:
    """Grid + node classification + cached extension operators for a domain."""

    def __init__(self, domain, h, min_interior_per_axis=9):
        self.domain = domain
        self.grid = make_grid(domain, h)
        self.labels = _classify(domain, self.grid)
        self.h = self.grid.h
        self._check_resolution(min_interior_per_axis)

        # vector entry order: x1 fastest, then x2, then x3
        flat_int_f = np.flatnonzero((self.labels == INTERIOR).ravel(order="F"))
        flat_ghost_f = np.flatnonzero((self.labels == GHOST).ravel(order="F"))
        self.idx_interior = np.stack(
            np.unravel_index(flat_int_f, self.grid.shape, order="F"), axis=1
        ).astype(np.int64)
        self.idx_ghost = np.stack(
            np.unravel_index(flat_ghost_f, self.grid.shape, order="F"), axis=1
        ).astype(np.int64)
        self.n_interior = len(self.idx_interior)
        self.n_ghost = len(self.idx_ghost)
        # C-order addresses for views into C-contiguous full arrays
        self._flat_int = np.ravel_multi_index(tuple(self.idx_interior.T), self.grid.shape)
        self._flat_ghost = np.ravel_multi_index(tuple(self.idx_ghost.T), self.grid.shape)
        self._ext_cache = {}
        self._frac_cache = None
        self._quad_cache = None
        self._ring1_cache = None

    def _check_resolution(self, nmin):
        for a in range(3):
            counts = (self.labels == INTERIOR).sum(axis=tuple(ax for ax in range(3) if ax != a))
            if counts.max() < nmin:
                raise InvalidInputError(
                    f"domain under-resolved: {counts.max()} interior nodes on axis {a}, need >= {nmin}"
                )

    # ------------------------------------------------------------ extensions

    def extension(self, mode):
        """(E, B_pts, Wb): ghost = E @ u_interior (+ Wb @ g(B_pts) in dirichlet mode)."""
        if mode in self._ext_cache:
            return self._ext_cache[mode]
        if mode not in ("dirichlet", "extrapolate"):
            raise InvalidInputError(f"unknown extension mode {mode!r}")
        grid, labels, dom = self.grid, self.labels, self.domain
        shape = grid.shape
        pos = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        pos[np.ravel_multi_index(tuple(self.idx_interior.T), shape, order="F")] = np.arange(
            self.n_interior
        )

        rows, cols, vals = [], [], []
        b_rows, b_vals, b_pts = [], [], []

        def interior_pos(i, j, k):
            return int(pos[i + shape[0] * (j + shape[1] * k)])

        for gnum, (gi, gj, gk) in enumerate(self.idx_ghost):
            gpt = grid.node_coords((gi, gj, gk))
            best = None
            if dom.kind == "box":
                s = np.zeros(3, dtype=int)
                for a, x in enumerate(gpt):
                    if x < dom.lo[a]:
                        s[a] = 1
                    elif x > dom.hi[a]:
                        s[a] = -1
                cands = [tuple(s)]
            else:
                inward = dom.center - gpt
                inward = inward / np.linalg.norm(inward)
                scored = sorted(
                    _DIAG_DIRECTIONS,
                    key=lambda d: (-(np.dot(d, inward) / np.linalg.norm(d)), d),
                )
                cands = scored
            def run_of_interior(d, start, count):
                steps = list(range(start, start + count))
                for k in steps:
                    ii = (gi + k * d[0], gj + k * d[1], gk + k * d[2])
                    if not all(0 <= ii[a] < shape[a] for a in range(3)) or labels[ii] != INTERIOR:
                        return None
                return steps

            for d in cands:
                d = np.asarray(d, dtype=int)
                # first run of consecutive interior steps along d
                s1 = None
                for k in range(1, 5):
                    ii = (gi + k * d[0], gj + k * d[1], gk + k * d[2])
                    if not all(0 <= ii[a] < shape[a] for a in range(3)):
                        break
                    if labels[ii] == INTERIOR:
                        s1 = k
                        break
                if s1 is None:
                    continue
                want = 3 if mode == "dirichlet" else 4
                steps = None
                for count in range(want, 1 if mode == "dirichlet" else 2, -1):
                    steps = run_of_interior(d, s1, count)
                    if steps is not None:
                        break
                if steps is None:
                    continue
                if mode == "dirichlet":
                    target = grid.node_coords((gi + s1 * d[0], gj + s1 * d[1], gk + s1 * d[2]))
                    t = dom.crossing(gpt, target) * s1
                    if s1 - t < 0.2:
                        shifted = run_of_interior(d, s1 + 1, len(steps))
                        if shifted is not None:
                            steps = shifted
                        # otherwise keep the close crossing; weights stay bounded by 1/0.2
                    best = (d, steps, t)
                else:
                    best = (d, steps, None)
                break
            if best is None:
                raise StencilError(
                    f"no extension direction for ghost node {(gi, gj, gk)}",
                    node=(int(gi), int(gj), int(gk)),
                )
            d, steps, t = best
            if mode == "dirichlet":
                nodes = [t] + list(steps)
                w = _lagrange_weights(nodes, 0.0)
                bpt = gpt + t * d * grid.h
                b_rows.append(gnum)
                b_vals.append(w[0])
                b_pts.append(bpt)
                wsteps = w[1:]
            else:
                w = _lagrange_weights(steps, 0.0)
                wsteps = w
            for k, wk in zip(steps, wsteps):
                p = interior_pos(gi + k * d[0], gj + k * d[1], gk + k * d[2])
                if p < 0:
                    raise StencilError("extension touched a non-interior node")
                rows.append(gnum)
                cols.append(p)
                vals.append(wk)

        E = sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_ghost, self.n_interior)
        )
        if mode == "dirichlet":
            B_pts = np.asarray(b_pts).reshape(self.n_ghost, 3)
            Wb = np.asarray(b_vals)
            out = (E, B_pts, Wb)
        else:
            out = (E, None, None)
        self._ext_cache[mode] = out
        return out

    # --------------------------------------------------------------- arrays

    def empty_full(self):
        return np.full(self.grid.shape, np.nan)

    def set_interior(self, arr, vec):
        arr.reshape(-1)[self._flat_int] = vec

    def get_interior(self, arr):
        return arr.reshape(-1)[self._flat_int].copy()

    def set_ghost(self, arr, vec):
        arr.reshape(-1)[self._flat_ghost] = vec

    def fill_ghost_dirichlet(self, arr, g):
        """Fill ghost values from interior values and boundary data g (callable or cached array)."""
        E, B_pts, Wb = self.extension("dirichlet")
        gb = g(B_pts) if callable(g) else np.asarray(g, dtype=float)
        vec = E @ self.get_interior(arr) + Wb * gb
        self.set_ghost(arr, vec)
        return arr

    def fill_ghost_extrapolate(self, arr):
        E, _, _ = self.extension("extrapolate")
        self.set_ghost(arr, E @ self.get_interior(arr))
        return arr

    def boundary_values_vector(self, g):
        E, B_pts, Wb = self.extension("dirichlet")
        return g(B_pts) if callable(g) else np.asarray(g, dtype=float)

    def interior_points(self):
        return self.grid.origin + self.idx_interior * self.grid.h

    # ------------------------------------------------------------ quadrature

    def cell_fractions(self):
        """Covered fraction of each node's cell, over interior + ghost nodes (full array)."""
        if self._frac_cache is not None:
            return self._frac_cache
        frac = np.zeros(self.grid.shape)
        if self.domain.kind == "box":
            frac[self.labels == INTERIOR] = 1.0
        else:
            h = self.grid.h
            R = self.domain.radius
            c = self.domain.center
            idx = np.concatenate([self.idx_interior, self.idx_ghost], axis=0)
            x = self.grid.origin + idx * h - c
            hi2 = np.sum((np.abs(x) + h / 2.0) ** 2, axis=1)
            lo2 = np.sum(np.maximum(np.abs(x) - h / 2.0, 0.0) ** 2, axis=1)
            full = hi2 <= R * R
            frac[idx[full, 0], idx[full, 1], idx[full, 2]] = 1.0
            cut = ~full & (lo2 < R * R)
            for i, j, k in idx[cut]:
                frac[i, j, k] = _ball_cell_fraction(
                    self.grid.node_coords((i, j, k)) - c, h, R
                )
        self._frac_cache = frac
        return frac

    def integrate(self, arr):
        """Midpoint-rule volume integral of a full nodal array over the domain.

        Box: plain cell sum over interior nodes. Ball: cells cut by the
        sphere are weighted by their covered fraction (computed exactly per
        cell), so the array must carry ghost values where fractions are
        nonzero.
        """
        cellvol = float(np.prod(self.grid.h))
        if self.domain.kind == "box":
            return cellvol * float(np.sum(arr.ravel(order="F")[self._flat_int]))
        frac = self.cell_fractions()
        mask = frac > 0.0
        vals = arr[mask]
        if np.any(~np.isfinite(vals)):
            raise StencilError("integrand missing values on cut cells; extend it first")
        return cellvol * float(np.sum(vals * frac[mask]))

    def surface_quadrature(self):
        if self._quad_cache is None:
            if self.domain.kind == "box":
                self._quad_cache = _box_surface_quadrature(self.domain, self.grid, self.labels)
            else:
                self._quad_cache = _ball_surface_quadrature(self.domain, float(np.max(self.grid.h)))
        return self._quad_cache


# ------------------------------------------------------------------- fields


@dataclass
class ScalarField:
    space: FieldSpace
    values: np.ndarray  # full lattice array, NaN on unset nodes

    @classmethod
    def from_callable(cls, space, fn):
        arr = space.empty_full()
        for idx_arr in (space.idx_interior, space.idx_ghost):
            pts = space.grid.origin + idx_arr * space.grid.h
            arr[idx_arr[:, 0], idx_arr[:, 1], idx_arr[:, 2]] = fn(pts)
        return cls(space, arr)

    @classmethod
    def from_interior(cls, space, vec, ghost=None, g=None):
        """ghost: None | 'extrapolate' | 'dirichlet' (needs g callable/values)."""
        arr = space.empty_full()
        space.set_interior(arr, np.asarray(vec, dtype=float))
        if ghost == "extrapolate":
            space.fill_ghost_extrapolate(arr)
        elif ghost == "dirichlet":
            space.fill_ghost_dirichlet(arr, g)
        elif ghost is not None:
            raise InvalidInputError(f"unknown ghost fill {ghost!r}")
        return cls(space, arr)

    def interior_vec(self):
        return self.space.get_interior(self.values)

    def copy(self):
        return ScalarField(self.space, self.values.copy())


@dataclass
class SymTensorField:
    """Symmetric 3x3 field, packed (s11, s22, s33, s12, s13, s23) per node."""

    space: FieldSpace
    values: np.ndarray  # shape grid.shape + (6,)

    @classmethod
    def from_interior(cls, space, packed, extend=True):
        arr = np.full(space.grid.shape + (6,), np.nan)
        for comp in range(6):
            comp_arr = np.full(space.grid.shape, np.nan)
            space.set_interior(comp_arr, packed[:, comp])
            if extend:
                space.fill_ghost_extrapolate(comp_arr)
            arr[..., comp] = comp_arr
        return cls(space, arr)

    @classmethod
    def from_callable(cls, space, fn):
        """fn(pts) -> (m, 6) packed values."""
        arr = np.full(space.grid.shape + (6,), np.nan)
        for idx_arr in (space.idx_interior, space.idx_ghost):
            pts = space.grid.origin + idx_arr * space.grid.h
            packed = fn(pts)
            arr[idx_arr[:, 0], idx_arr[:, 1], idx_arr[:, 2], :] = packed
        return cls(space, arr)

    def interior_packed(self):
        return np.stack(
            [self.space.get_interior(self.values[..., c]) for c in range(6)], axis=1
        )

    def det_field(self):
        """det over interior + ghost as a full array (for integration on balls)."""
        arr = np.full(self.space.grid.shape, np.nan)
        flatv = self.values.reshape(-1, 6)
        ok = np.all(np.isfinite(flatv), axis=1)
        arr.ravel()[ok] = sym3_det(np.ascontiguousarray(flatv[ok]))
        return arr

    def min_eig_interior(self):
        packed = np.ascontiguousarray(self.interior_packed())
        return sym3_eigvals(packed)[:, 0]


# --------------------------------------------------------------- operators


def fd_hessian(field: ScalarField) -> SymTensorField:
    """Second-order nodal Hessian (compact diagonal, cross-corner mixed)."""
    space = field.space
    packed = hessian6(field.values, space.idx_interior, *space.grid.h)
    bad = ~np.all(np.isfinite(packed), axis=1)
    if np.any(bad):
        node = space.idx_interior[np.argmax(bad)]
        raise StencilError(
            f"hessian stencil read unset nodes near {tuple(int(v) for v in node)}",
            node=tuple(int(v) for v in node),
        )
    return SymTensorField.from_interior(space, packed, extend=True)


def gradient_at(field_values, space, idx):
    return grad3(field_values, np.ascontiguousarray(idx), *space.grid.h)


def _ring1_idx(space):
    """Interior nodes plus ghost nodes whose six axis neighbors are all valued."""
    if space._ring1_cache is not None:
        return space._ring1_cache
    shape = space.grid.shape
    ok = (space.labels == INTERIOR) | (space.labels == GHOST)
    good = np.ones(len(space.idx_ghost), dtype=bool)
    for a in range(3):
        for s in (-1, 1):
            nb = space.idx_ghost.copy()
            nb[:, a] += s
            inb = (nb[:, a] >= 0) & (nb[:, a] < shape[a])
            val = np.zeros(len(nb), dtype=bool)
            val[inb] = ok[nb[inb, 0], nb[inb, 1], nb[inb, 2]]
            good &= val
    idx = np.concatenate([space.idx_interior, space.idx_ghost[good]], axis=0)
    space._ring1_cache = idx
    return idx


def row_divergence(tensor: SymTensorField):
    """w_j = sum_i d_i sigma^{ij} at interior and first-ring ghost nodes.

    Returns three full arrays (one per j), valued where the stencil reach
    allows; this is the inner half of the composed double divergence and,
    with a sign flip, the curvature data of the induced connection.
    """
    space = tensor.space
    shape = space.grid.shape
    idx = _ring1_idx(space)
    # packed component of (i, j)
    comp_of = {(0, 0): 0, (1, 1): 1, (2, 2): 2, (0, 1): 3, (1, 0): 3, (0, 2): 4, (2, 0): 4, (1, 2): 5, (2, 1): 5}
    out = []
    for j in range(3):
        acc = np.zeros(len(idx))
        for i in range(3):
            comp = comp_of[(i, j)]
            g = gradient_at(np.ascontiguousarray(tensor.values[..., comp]), space, idx)
            acc += g[:, i]
        arr = np.full(shape, np.nan)
        arr[tuple(idx.T)] = acc
        out.append(arr)
    return out


def double_div(tensor: SymTensorField) -> ScalarField:
    """sum_{ij} d_i d_j sigma^{ij} as composed central first differences."""
    space = tensor.space
    w = row_divergence(tensor)
    acc = np.zeros(space.n_interior)
    for j in range(3):
        g = gradient_at(np.ascontiguousarray(w[j]), space, space.idx_interior)
        acc += g[:, j]
    return ScalarField.from_interior(space, acc)


def surface_integrate(quad, density):
    density = np.asarray(density, dtype=float)
    if density.shape != quad.weights.shape:
        raise InvalidInputError("density length does not match the quadrature")
    return float(np.sum(quad.weights * density))


# ------------------------------------------------------------- quadratures


@dataclass
class SurfaceQuadrature:
    points: np.ndarray   # (N, 3)
    normals: np.ndarray  # (N, 3) outward unit
    weights: np.ndarray  # (N,)
    face_id: np.ndarray  # (N,) box face 0..5, -1 on balls

    def __len__(self):
        return len(self.weights)


def _box_surface_quadrature(domain, grid, labels):
    xs = grid.axes()
    pts, nrm, wts, fid = [], [], [], []
    interior_any = labels == INTERIOR
    for a in range(3):
        others = [b for b in range(3) if b != a]
        # node columns strictly inside the box cross-section
        sel = [
            (xs[b] > domain.lo[b] + 1e-12) & (xs[b] < domain.hi[b] - 1e-12) for b in others
        ]
        coords = [xs[others[0]][sel[0]], xs[others[1]][sel[1]]]
        A, B = np.meshgrid(coords[0], coords[1], indexing="ij")
        w = grid.h[others[0]] * grid.h[others[1]]
        for side, xval in ((0, domain.lo[a]), (1, domain.hi[a])):
            m = A.size
            p = np.zeros((m, 3))
            p[:, a] = xval
            p[:, others[0]] = A.ravel(order="F")
            p[:, others[1]] = B.ravel(order="F")
            n = np.zeros((m, 3))
            n[:, a] = -1.0 if side == 0 else 1.0
            pts.append(p)
            nrm.append(n)
            wts.append(np.full(m, w))
            fid.append(np.full(m, 2 * a + side, dtype=int))
    return SurfaceQuadrature(
        points=np.concatenate(pts),
        normals=np.concatenate(nrm),
        weights=np.concatenate(wts),
        face_id=np.concatenate(fid),
    )


def _ball_surface_quadrature(domain, h):
    R = domain.radius
    N = max(500, int(round(4.0 * math.pi * R * R / (h * h))))
    k = np.arange(N)
    z = 1.0 - 2.0 * (k + 0.5) / N
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts = domain.center + R * dirs
    w = np.full(N, 4.0 * math.pi * R * R / N)
    return SurfaceQuadrature(
        points=pts, normals=dirs, weights=w, face_id=np.full(N, -1, dtype=int)
    )


def _circle_rect_columns(rho, x0, x1, y0, y1):
    """Exact area of {a^2+b^2 <= rho^2} cut to [x0,x1] x [y0,y1]."""
    if rho <= 0.0:
        return 0.0
    x0 = max(x0, -rho)
    x1 = min(x1, rho)
    if x1 <= x0:
        return 0.0

    def anti_chord(a):
        a = min(max(a, -rho), rho)
        return 0.5 * (a * math.sqrt(max(rho * rho - a * a, 0.0)) + rho * rho * math.asin(a / rho))

    brk = {x0, x1}
    for y in (y0, y1):
        if abs(y) < rho:
            c = math.sqrt(rho * rho - y * y)
            for s in (-c, c):
                if x0 < s < x1:
                    brk.add(s)
    brk = sorted(brk)
    area = 0.0
    for a0, a1 in zip(brk[:-1], brk[1:]):
        am = 0.5 * (a0 + a1)
        chord = math.sqrt(max(rho * rho - am * am, 0.0))
        upper_is_chord = chord < y1
        lower_is_chord = -chord > y0
        lo_val = -chord if lower_is_chord else y0
        hi_val = chord if upper_is_chord else y1
        if hi_val <= lo_val:
            continue
        piece = 0.0
        piece += (anti_chord(a1) - anti_chord(a0)) if upper_is_chord else y1 * (a1 - a0)
        piece -= -(anti_chord(a1) - anti_chord(a0)) if lower_is_chord else y0 * (a1 - a0)
        area += piece
    return area


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _ball_cell_fraction(xrel, h, R):
    """Fraction of the cell centered at xrel (relative to ball center) inside radius R."""
    z0, z1 = xrel[2] - h[2] / 2.0, xrel[2] + h[2] / 2.0
    x0, x1 = xrel[0] - h[0] / 2.0, xrel[0] + h[0] / 2.0
    y0, y1 = xrel[1] - h[1] / 2.0, xrel[1] + h[1] / 2.0
    zm = 0.5 * (z0 + z1)
    zr = 0.5 * (z1 - z0)
    total = 0.0
    for t, w in zip(_GL_NODES, _GL_WEIGHTS):
        z = zm + zr * t
        rho2 = R * R - z * z
        if rho2 <= 0.0:
            continue
        total += w * _circle_rect_columns(math.sqrt(rho2), x0, x1, y0, y1)
    vol = total * zr
    return float(min(max(vol / (h[0] * h[1] * h[2]), 0.0), 1.0))


# ---------------------------------------------------- boundary interpolation


def trilinear(space, arr, pts):
    """Trilinear interpolation of a full nodal array at arbitrary points."""
    g = space.grid
    rel = (np.atleast_2d(pts) - g.origin) / g.h
    i0 = np.floor(rel).astype(int)
    f = rel - i0
    for a in range(3):
        i0[:, a] = np.clip(i0[:, a], 0, g.shape[a] - 2)
    out = np.zeros(len(rel))
    for da in (0, 1):
        for db in (0, 1):
            for dc in (0, 1):
                w = (
                    (f[:, 0] if da else 1 - f[:, 0])
                    * (f[:, 1] if db else 1 - f[:, 1])
                    * (f[:, 2] if dc else 1 - f[:, 2])
                )
                out += w * arr[i0[:, 0] + da, i0[:, 1] + db, i0[:, 2] + dc]
    if np.any(~np.isfinite(out)):
        raise StencilError("interpolation read unset nodes")
    return out


def _core_mask(space):
    """Interior nodes whose full 26-neighborhood carries values."""
    if getattr(space, "_core_cache", None) is not None:
        return space._core_cache
    valued = (space.labels == INTERIOR) | (space.labels == GHOST)
    core = space.labels == INTERIOR
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                core &= _shift_bool(valued, (-di, -dj, -dk))
    space._core_cache = core
    return core


def interp_quadratic(space, arr, pts):
    """Tensor-product quadratic interpolation on 3^3 node blocks.

    Block centers snap to the nearest core node (stepping toward the domain
    center when the nearest node's neighborhood is incomplete), so the value
    is a smooth local extrapolation near the boundary. Third-order accurate.
    """
    g = space.grid
    core = _core_mask(space)
    pts = np.atleast_2d(pts)
    rel = (pts - g.origin) / g.h
    c0 = np.rint(rel).astype(np.int64)
    for a in range(3):
        c0[:, a] = np.clip(c0[:, a], 1, g.shape[a] - 2)
    center_idx = np.rint((0.5 * (np.sum(space.domain.bbox(), axis=0)) - g.origin) / g.h).astype(np.int64)
    bad = ~core[c0[:, 0], c0[:, 1], c0[:, 2]]
    tries = 0
    while np.any(bad) and tries < 6:
        step = np.sign(center_idx[None, :] - c0[bad])
        c0[bad] += step.astype(np.int64)
        bad = ~core[c0[:, 0], c0[:, 1], c0[:, 2]]
        tries += 1
    if np.any(bad):
        raise StencilError("quadratic interpolation found no complete node block")
    t = rel - c0  # in [-0.5, 0.5] near the node, larger when snapped
    w = []
    for a in range(3):
        ta = t[:, a]
        w.append(
            np.stack([0.5 * ta * (ta - 1.0), (1.0 - ta) * (1.0 + ta), 0.5 * ta * (ta + 1.0)], axis=1)
        )
    out = np.zeros(len(pts))
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            for dc in (-1, 0, 1):
                vals = arr[c0[:, 0] + da, c0[:, 1] + db, c0[:, 2] + dc]
                out += w[0][:, da + 1] * w[1][:, db + 1] * w[2][:, dc + 1] * vals
    if np.any(~np.isfinite(out)):
        raise StencilError("quadratic interpolation read unset nodes")
    return out


_PROBE_STEPS = (0.5, 1.5, 2.5)


def extract_at_surface(space, arr, pts, normals, derivative=False):
    """Field values (or normal derivatives) at boundary points.

    Quadratic extrapolation through probes at 0.5h, 1.5h, 2.5h along the
    inward normal; probes align with node planes on box faces, which makes
    the extraction exact for quadratic fields there.
    """
    pts = np.atleast_2d(pts)
    normals = np.atleast_2d(normals)
    heff = np.linalg.norm(normals * space.grid.h, axis=1)
    probes = []
    for s in _PROBE_STEPS:
        probes.append(trilinear(space, arr, pts - normals * (s * heff)[:, None]))
    P = np.stack(probes, axis=1)
    s = np.asarray(_PROBE_STEPS)
    if not derivative:
        w = _lagrange_weights(s, 0.0)
        return P @ w
    # derivative along the inward normal direction, flipped to outward
    w = _lagrange_derivative_weights(s, 0.0)
    return -(P @ w) / heff


def _lagrange_derivative_weights(nodes, x):
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    w = np.zeros(n)
    for i in range(n):
        tot = 0.0
        for m in range(n):
            if m == i:
                continue
            prod = 1.0
            for j in range(n):
                if j != i and j != m:
                    prod *= (x - nodes[j]) / (nodes[i] - nodes[j])
            tot += prod / (nodes[i] - nodes[m])
        w[i] = tot
    return w


# ------------------------------------------------------------------ file IO


def _domain_header(domain):
    if domain.kind == "box":
        return "box " + " ".join(f"{v:.17g}" for v in (*domain.lo, *domain.hi))
    return "ball " + " ".join(f"{v:.17g}" for v in (*domain.center, domain.radius))


def _domain_from_header(tokens):
    kind = tokens[0]
    vals = [float(t) for t in tokens[1:]]
    if kind == "box":
        return ConvexDomain.box(vals[:3], vals[3:6])
    if kind == "ball":
        return ConvexDomain.ball(vals[:3], vals[3])
    raise InvalidInputError(f"bad domain header {tokens!r}")


def write_field(path, name, field):
    """CSV writer for scalar and symmetric-tensor fields (exterior nodes omitted)."""
    space = field.space
    g = space.grid
    tensor = isinstance(field, SymTensorField)
    lines = [
        f"# field {name} nx {g.shape[0]} ny {g.shape[1]} nz {g.shape[2]} "
        f"h {g.h[0]:.17g} {g.h[1]:.17g} {g.h[2]:.17g} "
        f"origin {g.origin[0]:.17g} {g.origin[1]:.17g} {g.origin[2]:.17g} "
        f"domain {_domain_header(space.domain)}"
    ]
    for idx_arr in (space.idx_interior, space.idx_ghost):
        for i, j, k in idx_arr:
            if tensor:
                v = field.values[i, j, k]
                if not np.all(np.isfinite(v)):
                    continue
                lines.append(
                    f"{i},{j},{k}," + ",".join(f"{x:.17g}" for x in v)
                )
            else:
                v = field.values[i, j, k]
                if not np.isfinite(v):
                    continue
                lines.append(f"{i},{j},{k},{v:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path):
    """Read a field CSV; returns (name, ScalarField or SymTensorField)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        body = fh.read()
    tok = header.split()
    if tok[0] != "#" or tok[1] != "field":
        raise InvalidInputError("not a field file")
    name = tok[2]

    def grab(key, n):
        i = tok.index(key)
        return tok[i + 1 : i + 1 + n]

    h = [float(v) for v in grab("h", 3)]
    kind = tok[tok.index("domain") + 1]
    dom = _domain_from_header(grab("domain", 7 if kind == "box" else 5))
    space = FieldSpace(dom, h)
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    if data.shape[1] == 4:
        field = ScalarField(space, space.empty_full())
        field.values[
            data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2].astype(int)
        ] = data[:, 3]
    elif data.shape[1] == 9:
        arr = np.full(space.grid.shape + (6,), np.nan)
        arr[data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2].astype(int)] = data[:, 3:]
        field = SymTensorField(space, arr)
    else:
        raise InvalidInputError(f"unexpected column count {data.shape[1]}")
    return name, field
