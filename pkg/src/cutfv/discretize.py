"""Fourth-order FV discretization of a*uxx + b*uxy + c*uyy = f on cut cells.

SFV rows come from the symmetric 5-point fourth-order stencils with ghost
filling behind grid-aligned boundary faces; PLG rows fit a degree-4
polynomial through cell averages (and one boundary average on irregular
cells) by constrained weighted least squares.  The SFV block is never
assembled: it is applied on the fly through a padded scatter array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse

from . import plg as plg_mod
from .cutcell import classify_sfv, extendable_ghosts, stencil_offsets
from .quadrature import (
    basis_exponents,
    boundary_basis_averages,
    boundary_function_average,
    box_averages,
    box_moments,
    cell_moments,
    integrate_average,
    segment_average,
)


class DiscretizationError(Exception):
    pass


@dataclass(frozen=True)
class EllipticCoeffs:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.b * self.b - 4.0 * self.a * self.c >= 0.0:
            raise DiscretizationError(
                f"not elliptic: b^2-4ac = {self.b ** 2 - 4 * self.a * self.c}")


@dataclass(frozen=True)
class BCSpec:
    kind: str                      # dirichlet | neumann | robin | periodic
    g: object = None               # callable boundary datum
    alpha: tuple = (0.0, 0.0)      # robin coefficients

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin", "periodic"):
            raise DiscretizationError(f"unknown bc kind {self.kind!r}")
        if self.kind == "robin" and self.alpha == (0.0, 0.0):
            raise DiscretizationError("robin bc requires nonzero alpha")


class BoundaryCondition:
    """Per-curve boundary conditions (or fully periodic)."""

    def __init__(self, per_curve=None, periodic=False):
        self.per_curve = list(per_curve or [])
        self.periodic = periodic

    @staticmethod
    def dirichlet(g):
        return BoundaryCondition([BCSpec("dirichlet", g)])

    def for_curve(self, curve_id):
        if self.periodic:
            raise DiscretizationError("periodic bc has no boundary curves")
        if curve_id >= len(self.per_curve):
            if len(self.per_curve) == 1:
                return self.per_curve[0]
            raise DiscretizationError(f"no bc for curve {curve_id}")
        return self.per_curve[curve_id]


# ---------------------------------------------------------------------------
# ghost filling
# ---------------------------------------------------------------------------

# interior weights apply to (host, host-1, host-2, host-3) walking away from
# the wall; the data weight multiplies the face average of the datum
# (times h for Neumann).  Dirichlet layer 2 is re-derived from the quartic
# matching conditions; the commonly printed data weight 75/12 fails to
# reproduce constants, the correct one is 25.
GHOST_RULES = {
    ("dirichlet", 1): ((Fraction(-77, 12), Fraction(43, 12),
                        Fraction(-17, 12), Fraction(3, 12)), Fraction(5)),
    ("dirichlet", 2): ((Fraction(-505, 12), Fraction(335, 12),
                        Fraction(-145, 12), Fraction(27, 12)), Fraction(25)),
    ("neumann", 1): ((Fraction(5, 10), Fraction(9, 10),
                      Fraction(-5, 10), Fraction(1, 10)), Fraction(12, 10)),
    ("neumann", 2): ((Fraction(-15, 2), Fraction(29, 2),
                      Fraction(-15, 2), Fraction(3, 2)), Fraction(6)),
}


def ghost_fill_plan(kind, layer, h):
    """Interior weights and data weight for one ghost layer.

    Returns (weights[4], data_weight): ghost = sum_k w_k <u>_(host-k*step)
    + data_weight * <datum>_face, exact for quartics.
    """
    if kind not in ("dirichlet", "neumann"):
        raise DiscretizationError(f"no ghost rule for bc kind {kind!r}")
    w, d = GHOST_RULES[(kind, layer)]
    data = float(d) * (h if kind == "neumann" else 1.0)
    return np.array([float(x) for x in w]), data


def sfv_stencil(coeffs, h):
    """Offset -> weight map of the symmetric fourth-order interior stencil."""
    lap = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    grd = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    out = {}
    for m in range(-2, 3):
        out[(m, 0)] = out.get((m, 0), 0.0) + coeffs.a * lap[m + 2]
        out[(0, m)] = out.get((0, m), 0.0) + coeffs.c * lap[m + 2]
    if coeffs.b != 0.0:
        for m1 in range(-2, 3):
            for m2 in range(-2, 3):
                w = coeffs.b * grd[m1 + 2] * grd[m2 + 2]
                if w != 0.0:
                    out[(m1, m2)] = out.get((m1, m2), 0.0) + w
    return {k: v for k, v in out.items() if v != 0.0}


# ---------------------------------------------------------------------------
# block system
# ---------------------------------------------------------------------------

@dataclass
class PlgRow:
    index: tuple
    lattice: object
    beta: np.ndarray          # one weight per lattice site
    beta_b: float             # boundary-average weight (irregular cells)
    g_avg: float              # boundary datum average entering b


class BlockSystem:
    """A u = b in SFV/PLG block form; A11/A12 applied matrix-free."""

    def __init__(self, cset, coeffs, bc, classes, ghosts, sfv_ids, plg_ids,
                 a2, b, d11, ghost_hom, ghost_positions, plg_rows):
        self.cset = cset
        self.coeffs = coeffs
        self.bc = bc
        self.classes = classes
        self.ghosts = ghosts
        self.sfv_ids = sfv_ids
        self.plg_ids = plg_ids
        self.pos = {idx: k for k, idx in enumerate(sfv_ids + plg_ids)}
        self.n1 = len(sfv_ids)
        self.n2 = len(plg_ids)
        self.n = self.n1 + self.n2
        self.a2 = a2
        self.b = b
        self.d11 = d11
        self.plg_rows = plg_rows
        nx, ny = cset.shape
        self._shape_p = (nx + 4, ny + 4)
        ids = sfv_ids + plg_ids
        self._scatter_i = np.array([i + 2 for i, _ in ids], dtype=np.intp)
        self._scatter_j = np.array([j + 2 for _, j in ids], dtype=np.intp)
        self._sfv_i = self._scatter_i[: self.n1]
        self._sfv_j = self._scatter_j[: self.n1]
        self._ghost_hom = ghost_hom          # csr (n_ghosts, n)
        gp = ghost_positions
        self._ghost_i = np.array([i + 2 for i, _ in gp], dtype=np.intp)
        self._ghost_j = np.array([j + 2 for _, j in gp], dtype=np.intp)
        self._periodic = bc.periodic

    # -- matrix-free operator ------------------------------------------------

    def _padded(self, u):
        p = np.zeros(self._shape_p)
        p[self._scatter_i, self._scatter_j] = u
        if self._periodic:
            nx, ny = self.cset.shape
            p[0:2, 2:ny + 2] = p[nx:nx + 2, 2:ny + 2]
            p[nx + 2:nx + 4, 2:ny + 2] = p[2:4, 2:ny + 2]
            p[:, 0:2] = p[:, ny:ny + 2]
            p[:, ny + 2:ny + 4] = p[:, 2:4]
        elif len(self._ghost_i):
            p[self._ghost_i, self._ghost_j] = self._ghost_hom @ u
        return p

    def _sfv_apply_padded(self, p):
        co = self.coeffs
        h = self.cset.h
        val = np.zeros(self._shape_p)
        core = np.s_[2:-2, 2:-2]
        lap = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
        acc = np.zeros_like(p[core])
        for m in range(-2, 3):
            acc += (co.a * lap[m + 2]) * p[2 + m: p.shape[0] - 2 + m, 2:-2]
            acc += (co.c * lap[m + 2]) * p[2:-2, 2 + m: p.shape[1] - 2 + m]
        if co.b != 0.0:
            grd = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
            gy = np.zeros((p.shape[0], p.shape[1] - 4))
            for m in range(-2, 3):
                gy += grd[m + 2] * p[:, 2 + m: p.shape[1] - 2 + m]
            for m in range(-2, 3):
                acc += (co.b * grd[m + 2]) * gy[2 + m: p.shape[0] - 2 + m, :]
        val[core] = acc
        return val

    def apply(self, u):
        """Full operator A @ u over (SFV, PLG) unknowns."""
        p = self._padded(u)
        field = self._sfv_apply_padded(p)
        out = np.empty(self.n)
        out[: self.n1] = field[self._sfv_i, self._sfv_j]
        if self.n2:
            out[self.n1:] = self.a2 @ u
        return out

    def residual(self, u, rhs=None):
        rhs = self.b if rhs is None else rhs
        return rhs - self.apply(u)

    def dense(self):
        """Assembled dense matrix (bottom-solver / small systems only)."""
        a = np.empty((self.n, self.n))
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = 1.0
            a[:, k] = self.apply(e)
        return a

    def a12_matrix(self):
        """Sparse A12 (SFV rows, PLG columns), built column by column."""
        cols = []
        for k in range(self.n2):
            e = np.zeros(self.n)
            e[self.n1 + k] = 1.0
            p = self._padded(e)
            field = self._sfv_apply_padded(p)
            cols.append(scipy.sparse.csc_matrix(
                field[self._sfv_i, self._sfv_j][:, None]))
        if not cols:
            return scipy.sparse.csr_matrix((self.n1, 0))
        return scipy.sparse.hstack(cols).tocsr()

    def split_a2(self):
        """A21 (PLG rows x SFV cols) and A22 (PLG rows x PLG cols)."""
        a2 = self.a2.tocsc()
        return a2[:, : self.n1].tocsr(), a2[:, self.n1:].tocsr()


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _lphi_vector(moments, exps, coeffs, h):
    """Cell averages of L(phi) for every scaled basis monomial."""
    out = np.empty(len(exps))
    for k, (a1, a2) in enumerate(exps):
        v = 0.0
        if a1 >= 2:
            v += coeffs.a * a1 * (a1 - 1) * moments[(a1 - 2, a2)]
        if a2 >= 2:
            v += coeffs.c * a2 * (a2 - 1) * moments[(a1, a2 - 2)]
        if a1 >= 1 and a2 >= 1 and coeffs.b != 0.0:
            v += coeffs.b * a1 * a2 * moments[(a1 - 1, a2 - 1)]
        out[k] = v / (h * h)
    return out


def _binomial_table(n):
    t = np.zeros((n + 1, n + 1))
    for a in range(n + 1):
        t[a, 0] = 1.0
        for i in range(1, a + 1):
            t[a, i] = t[a - 1, i - 1] + (t[a - 1, i] if i <= a - 1 else 0.0)
    return t


class _MomentOracle:
    """Scaled basis averages over cut cells for one PLG row.

    Per-cell moments about the cell's own box center are cached across rows
    (shared dict); the row's basis center is reached by a binomial shift of
    the scaled coordinates.
    """

    def __init__(self, cset, p, h, n, shared=None):
        self.cset = cset
        self.p = p
        self.h = h
        self.n = n
        self.exps = basis_exponents(n)
        self._shared = shared if shared is not None else {}
        self._local = {}
        self._binom = _binomial_table(n)

    def _own(self, idx):
        if idx not in self._shared:
            cell = self.cset.cells[idx]
            pk = self.cset.center(idx)
            if cell.kind == "regular":
                m = box_moments(self.cset.box(idx), pk, self.h, self.n)
            else:
                m = cell_moments(cell.geom, pk, self.h, self.n)
            arr = np.zeros((self.n + 1, self.n + 1))
            for (a, b), v in m.items():
                arr[a, b] = v
            self._shared[idx] = arr
        return self._shared[idx]

    def table(self, idx):
        arr = self._translated(idx)
        return {(a, b): arr[a, b] for a, b in self.exps}

    def _translated(self, idx):
        own = self._own(idx)
        pk = self.cset.center(idx)
        dx = (pk[0] - self.p[0]) / self.h
        dy = (pk[1] - self.p[1]) / self.h
        n = self.n
        binom = self._binom
        # ((x-p)/h)^a = sum_i C(a,i) dx^(a-i) ((x-pk)/h)^i, same in y
        tx = np.zeros((n + 1, n + 1))
        ty = np.zeros((n + 1, n + 1))
        for a in range(n + 1):
            for i in range(a + 1):
                tx[a, i] = binom[a, i] * dx ** (a - i)
                ty[a, i] = binom[a, i] * dy ** (a - i)
        return tx @ own @ ty.T

    def vector(self, idx):
        if idx not in self._local:
            arr = self._translated(idx)
            self._local[idx] = np.array([arr[a, b] for a, b in self.exps])
        return self._local[idx]


def plg_weights(sites, idx, w_min=0.5, w_b=0.5):
    """Inverse-weight diagonal of the constrained minimizer.

    Nearby cells and the boundary average may take larger coefficients than
    distant cells: entry k penalizes beta_k^2 proportionally to the index
    distance from the cell (floored at w_min); the last entry is w_b.
    """
    return [max(np.hypot(s[0] - idx[0], s[1] - idx[1]), w_min)
            for s in sites] + [w_b]


ROW_MASS_OK = 40.0  # |beta|_1 h^2 of a healthy row; ~2x the 90th percentile


def build_plg_row(cset, idx, coeffs, bc, n=4, shared_moments=None):
    """Least-squares row for one PLG cell, retried over lattice variants.

    The coefficient mass |beta|_1 h^2 bounds the row truncation constant;
    rows far above the typical mass are rebuilt on the next acceptable
    lattices and the lightest row wins.
    """
    h = cset.h
    best = None
    for nth in range(4):
        try:
            row = _build_plg_row_nth(cset, idx, coeffs, bc, n=n, nth=nth,
                                     shared_moments=shared_moments)
        except plg_mod.NoPoisedLatticeError:
            break
        mass = np.sum(np.abs(row.beta)) * h * h + abs(row.beta_b) * h
        if mass <= ROW_MASS_OK:
            return row
        if best is None or mass < best[0]:
            best = (mass, row)
    if best is None:
        raise plg_mod.NoPoisedLatticeError(f"no usable row at {idx}")
    return best[1]


def _build_plg_row_nth(cset, idx, coeffs, bc, n=4, nth=0, shared_moments=None):
    """Least-squares row for one PLG cell (lattice, weights, datum)."""
    h = cset.h
    p = cset.center(idx)
    oracle = _MomentOracle(cset, p, h, n, shared=shared_moments)
    lattice = plg_mod.find_lattice(cset, idx, n, oracle.vector, nth=nth)
    exps = oracle.exps
    m_sites = plg_mod.sample_matrix(lattice.sites, oracle.vector)
    phibar = _lphi_vector(oracle.table(idx), exps, coeffs, h)

    cell = cset.cells[idx]
    pieces_by_curve = {}
    if cell.kind == "irregular":
        for e in cell.geom.boundary_pieces():
            pieces_by_curve.setdefault(e.curve_id, []).append(e.piece)

    if pieces_by_curve:
        num = np.zeros(len(exps))
        g_num = 0.0
        total_len = 0.0
        for ci, pieces in sorted(pieces_by_curve.items()):
            spec = bc.for_curve(ci)
            op = {"dirichlet": "value", "neumann": "normal",
                  "robin": "robin"}[spec.kind]
            avg, length = boundary_basis_averages(
                pieces, exps, p, h, op=op, robin=spec.alpha)
            gavg, _ = boundary_function_average(pieces, spec.g)
            num += avg * length
            g_num += gavg * length
            total_len += length
        bnd_col = num / total_len
        g_avg = g_num / total_len
        m_full = np.concatenate([m_sites, bnd_col[:, None]], axis=1)
        w = plg_weights(lattice.sites, idx)
        sqw = np.sqrt(1.0 / np.asarray(w))
        beta_w, *_ = np.linalg.lstsq(m_full * sqw[None, :], phibar,
                                     rcond=None)
        beta = beta_w * sqw
        resid = np.max(np.abs(m_full @ beta - phibar))
        if resid > 1e-7 * max(np.max(np.abs(phibar)), 1.0):
            raise DiscretizationError(
                f"PLG row at {idx}: constraint residual {resid:g}")
        return PlgRow(idx, lattice, beta[:-1], float(beta[-1]), g_avg)

    beta = np.linalg.solve(m_sites, phibar)
    return PlgRow(idx, lattice, beta, 0.0, 0.0)


def _wall_datum(cset, bc, site):
    """Face average of the boundary datum over an extendable face."""
    spec = bc.for_curve(site.curve_id)
    x0, y0, x1, y1 = cset.box(site.host)
    seg = {"xlo": ((x0, y0), (x0, y1)), "xhi": ((x1, y0), (x1, y1)),
           "ylo": ((x0, y0), (x1, y0)), "yhi": ((x0, y1), (x1, y1))}[site.side]
    return segment_average(seg[0], seg[1], spec.g, k=8), spec.kind


def f_averages(cset, f, order=8):
    """Cell averages of the source term over every cut cell."""
    ids = sorted(cset.cells)
    out = {}
    reg = [i for i in ids if cset.cells[i].kind == "regular"]
    if reg:
        vals = box_averages(np.array([cset.box(i) for i in reg]), f, k=order)
        out.update(zip(reg, vals))
    for idx in ids:
        cell = cset.cells[idx]
        if cell.kind != "regular":
            out[idx] = integrate_average(cell.geom, f, k=10)
    return out


def assemble(cset, coeffs, bc, f, classes=None, ghosts=None, plg_order=None,
             n=4, fbar=None):
    """Build the block linear system A u = b = f - N g.

    plg_order fixes the ordering of the PLG unknowns (multigrid passes the
    boundary total order); default is lexicographic.
    """
    h = cset.h
    if bc.periodic:
        ghosts = {}
        classes = {idx: "sfv" for idx in cset.cells}
        if any(c.kind != "regular" for c in cset.cells.values()):
            raise DiscretizationError("periodic bc needs a full-rect domain")
    else:
        if ghosts is None:
            ghosts = extendable_ghosts(cset)
        if classes is None:
            classes = classify_sfv(cset, coeffs.b, ghosts)

    sfv_ids = sorted(idx for idx, c in classes.items() if c == "sfv")
    if plg_order is None:
        plg_ids = sorted(idx for idx, c in classes.items() if c == "plg")
    else:
        plg_ids = list(plg_order)
    pos = {idx: k for k, idx in enumerate(sfv_ids + plg_ids)}
    n1, n2 = len(sfv_ids), len(plg_ids)

    # ghost machinery: homogeneous fill matrix and data values
    stencil = sfv_stencil(coeffs, h)
    gpos = sorted(ghosts)
    ghost_rows = []
    ghost_data = np.zeros(len(gpos))
    for k, gp in enumerate(gpos):
        site = ghosts[gp]
        datum, kind = (0.0, None)
        if not bc.periodic:
            datum, kind = _wall_datum(cset, bc, site)
            w, dmul = ghost_fill_plan(kind, site.layer, h)
        cols = []
        for m in range(4):
            cell = (site.host[0] - m * site.step[0],
                    site.host[1] - m * site.step[1])
            cols.append((pos[cell], w[m]))
        ghost_rows.append(cols)
        ghost_data[k] = dmul * datum
    if gpos:
        rows = np.repeat(np.arange(len(gpos)), 4)
        cols = np.array([c for r in ghost_rows for c, _ in r])
        vals = np.array([v for r in ghost_rows for _, v in r])
        ghost_hom = scipy.sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(gpos), n1 + n2))
    else:
        ghost_hom = scipy.sparse.csr_matrix((0, n1 + n2))

    # right-hand side: cell averages of f minus boundary-data contributions
    if fbar is None:
        fbar = f_averages(cset, f)
    b = np.array([fbar[idx] for idx in sfv_ids + plg_ids], dtype=float)

    # PLG rows
    a2 = scipy.sparse.lil_matrix((n2, n1 + n2))
    plg_rows = {}
    shared_moments = {}
    for r, idx in enumerate(plg_ids):
        row = build_plg_row(cset, idx, coeffs, bc, n=n,
                            shared_moments=shared_moments)
        plg_rows[idx] = row
        for site, w in zip(row.lattice.sites, row.beta):
            a2[r, pos[site]] += w
        b[n1 + r] -= row.beta_b * row.g_avg
    a2 = a2.tocsr()

    sys = BlockSystem(cset, coeffs, bc, classes, ghosts, sfv_ids, plg_ids,
                      a2, b, None, ghost_hom, gpos, plg_rows)

    # fold ghost data into b1 by one stencil application on data-only fill
    if gpos and not bc.periodic:
        p = np.zeros(sys._shape_p)
        p[sys._ghost_i, sys._ghost_j] = ghost_data
        field = sys._sfv_apply_padded(p)
        b[:n1] -= field[sys._sfv_i, sys._sfv_j]
        sys.b = b

    # diagonal of A11, including ghost feedback onto the owning cell
    d11 = np.full(n1, stencil.get((0, 0), 0.0))
    ghost_on_cell = {}
    for k, gp in enumerate(gpos):
        for c, v in ghost_rows[k]:
            ghost_on_cell.setdefault(gp, []).append((c, v))
    for r, idx in enumerate(sfv_ids):
        for (m1, m2), s in stencil.items():
            gp = (idx[0] + m1, idx[1] + m2)
            if gp in ghost_on_cell:
                for c, v in ghost_on_cell[gp]:
                    if c == r:
                        d11[r] += s * v
    sys.d11 = d11
    return sys
