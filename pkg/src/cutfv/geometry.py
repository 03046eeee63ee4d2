"""Explicit piecewise-parametric boundaries and clipping against grid boxes.

A domain is a regular open set whose boundary is a collection of oriented
Jordan curves (interior always on the left of travel).  Curves are chains of
line segments and parametric cubics stored in power basis over t in [0, 1].
Everything downstream (cut cells, moments, boundary averages) consumes the
CellGeometry objects produced here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TAU_GEOM_FACTOR = 1e-12  # snapping tolerance relative to the box size h

_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss01(k):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    if k not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(k)
        _GAUSS_CACHE[k] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS_CACHE[k]


class GeometryError(Exception):
    """Base class for boundary-geometry failures."""


class DegeneracyError(GeometryError):
    """A curve/box intersection could not be resolved at tolerance.

    Usually means h is too large for the geometry, or the input is broken.
    """


class NotAdjacentError(GeometryError):
    """Regularized union of two cell geometries whose closures do not meet."""


# ---------------------------------------------------------------------------
# polynomial root finding (batched, low degree)
# ---------------------------------------------------------------------------

def real_roots_batch(coeffs, lo=0.0, hi=1.0, pad=1e-9):
    """Real roots in [lo-pad, hi+pad] of a batch of polynomials.

    coeffs: (m, k) ascending powers, k <= 7.  Returns a list of 1D arrays,
    one per row, each sorted.  Roots are Newton-polished on the original
    coefficients; near-multiple roots may coalesce.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    m, k = coeffs.shape
    out = [np.empty(0)] * m
    scale = np.max(np.abs(coeffs), axis=1)
    ok = scale > 0.0
    norm = np.where(ok, scale, 1.0)
    c = coeffs / norm[:, None]
    # effective degree per row
    deg = np.zeros(m, dtype=int)
    for d in range(k - 1, 0, -1):
        deg[(deg == 0) & (np.abs(c[:, d]) > 1e-13)] = d
    for d in range(1, k):
        rows = np.nonzero(deg == d)[0]
        if rows.size == 0:
            continue
        cd = c[rows, : d + 1]
        if d == 1:
            roots = (-cd[:, 0] / cd[:, 1])[:, None]
        else:
            # companion matrices, batched eigenvalues; keep near-real pairs
            # (double roots split into conjugates with O(sqrt(eps)) imag)
            comp = np.zeros((rows.size, d, d))
            comp[:, 1:, :-1] = np.eye(d - 1)
            comp[:, :, -1] = -cd[:, :d] / cd[:, d][:, None]
            ev = np.linalg.eigvals(comp)
            keep = np.abs(ev.imag) <= 1e-6 * (1.0 + np.abs(ev.real))
            roots = np.where(keep, ev.real, np.nan)
        # Newton polish on original (normalized) coefficients
        for _ in range(3):
            p = np.zeros_like(roots)
            dp = np.zeros_like(roots)
            for j in range(d, -1, -1):
                dp = dp * roots + p
                p = p * roots + cd[:, j][:, None]
            step = p / np.where(np.abs(dp) > 1e-300, dp, np.inf)
            roots = roots - np.clip(step, -1.0, 1.0)
        # reject polished points that are not actually roots
        res = np.zeros_like(roots)
        for j in range(d, -1, -1):
            res = res * roots + cd[:, j][:, None]
        roots = np.where(np.abs(res) <= 1e-9, roots, np.nan)
        for rr, row in zip(rows, roots):
            t = row[np.isfinite(row)]
            t = t[(t >= lo - pad) & (t <= hi + pad)]
            if t.size > 1:
                t = np.sort(t)
                t = t[np.concatenate(([True], np.diff(t) > 1e-12))]
            out[rr] = np.clip(np.sort(t), lo, hi)
    return out


def real_roots(coeffs, lo=0.0, hi=1.0, pad=1e-9):
    """Real roots in the window for a single coefficient vector."""
    return real_roots_batch(np.asarray(coeffs, dtype=float)[None, :], lo, hi, pad)[0]


# ---------------------------------------------------------------------------
# curve pieces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePiece:
    """One boundary piece, t in [0, 1], power-basis coefficients."""

    cx: tuple
    cy: tuple

    @property
    def is_line(self):
        return len(self.cx) == 2

    @staticmethod
    def line(p0, p1):
        return CurvePiece((p0[0], p1[0] - p0[0]), (p0[1], p1[1] - p0[1]))

    @staticmethod
    def cubic_bezier(p0, p1, p2, p3):
        def pw(a0, a1, a2, a3):
            return (a0,
                    3.0 * (a1 - a0),
                    3.0 * (a2 - 2.0 * a1 + a0),
                    a3 - 3.0 * a2 + 3.0 * a1 - a0)
        return CurvePiece(pw(p0[0], p1[0], p2[0], p3[0]),
                          pw(p0[1], p1[1], p2[1], p3[1]))

    def point(self, t):
        t = np.asarray(t, dtype=float)
        x = np.zeros_like(t)
        y = np.zeros_like(t)
        for j in range(len(self.cx) - 1, -1, -1):
            x = x * t + self.cx[j]
            y = y * t + self.cy[j]
        return x, y

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        dx = np.zeros_like(t)
        dy = np.zeros_like(t)
        for j in range(len(self.cx) - 1, 0, -1):
            dx = dx * t + j * self.cx[j]
            dy = dy * t + j * self.cy[j]
        return dx, dy

    def start(self):
        return self.cx[0], self.cy[0]

    def end(self):
        return float(sum(self.cx)), float(sum(self.cy))

    def direction(self, t, at_end=False):
        """Unit tangent; falls back to a finite difference at cusps."""
        dx, dy = self.deriv(t)
        n = math.hypot(float(dx), float(dy))
        if n < 1e-14:
            eps = 1e-6
            t2 = t - eps if at_end else t + eps
            x0, y0 = self.point(t)
            x1, y1 = self.point(t2)
            dx, dy = (x0 - x1, y0 - y1) if at_end else (x1 - x0, y1 - y0)
            n = math.hypot(float(dx), float(dy))
        return float(dx) / n, float(dy) / n

    def subpiece(self, ta, tb):
        """Reparametrize [ta, tb] onto [0, 1] (exact coefficient algebra)."""
        d = len(self.cx) - 1
        s = tb - ta
        # substitute t = ta + s*u via binomial expansion
        def sub(c):
            out = np.zeros(d + 1)
            for j, cj in enumerate(c):
                for i in range(j + 1):
                    out[i] += cj * math.comb(j, i) * (ta ** (j - i)) * (s ** i)
            return tuple(out)
        return CurvePiece(sub(self.cx), sub(self.cy))

    def reversed_(self):
        return self.subpiece(1.0, 0.0)

    @cached_property
    def _bbox(self):
        ts = [0.0, 1.0]
        if not self.is_line:
            for c in (self.cx, self.cy):
                dc = [j * c[j] for j in range(1, len(c))]
                ts.extend(real_roots(dc, 0.0, 1.0).tolist())
        x, y = self.point(np.asarray(ts))
        return float(x.min()), float(y.min()), float(x.max()), float(y.max())

    def bbox(self):
        """Tight axis-aligned bounding box (cached)."""
        return self._bbox

    @cached_property
    def _arclength(self):
        t, w = _gauss01(12)
        dx, dy = self.deriv(t)
        return float(np.sum(w * np.hypot(dx, dy)))

    def arclength(self, k=12):
        if k == 12:
            return self._arclength
        t, w = _gauss01(k)
        dx, dy = self.deriv(t)
        return float(np.sum(w * np.hypot(dx, dy)))

    def axis_hits(self, axis, coord, lo=0.0, hi=1.0):
        """Parameters where coordinate `axis` equals `coord`."""
        c = np.array(self.cx if axis == 0 else self.cy, dtype=float)
        c[0] -= coord
        return real_roots(c, lo, hi)


# ---------------------------------------------------------------------------
# Jordan curves and regions
# ---------------------------------------------------------------------------

class JordanCurve:
    """Closed chain of pieces; enclosed side on the left of travel."""

    def __init__(self, pieces, tol=1e-9):
        if not pieces:
            raise GeometryError("empty curve")
        self.pieces = list(pieces)
        scale = max(abs(v) for p in pieces for v in (*p.cx, *p.cy)) or 1.0
        for a, b in zip(self.pieces, self.pieces[1:] + self.pieces[:1]):
            ax, ay = a.end()
            bx, by = b.start()
            if math.hypot(ax - bx, ay - by) > tol * scale:
                raise GeometryError("curve chain is not closed")
        lens = np.array([p.arclength() for p in self.pieces])
        if np.any(lens <= 0.0):
            raise GeometryError("degenerate curve piece")
        self._cumlen = np.concatenate(([0.0], np.cumsum(lens)))
        self.length = float(self._cumlen[-1])

    def signed_area(self):
        x0 = 0.5 * (min(p.bbox()[0] for p in self.pieces)
                    + max(p.bbox()[2] for p in self.pieces))
        return sum(_green_area(p, x0) for p in self.pieces)

    def bbox(self):
        bs = [p.bbox() for p in self.pieces]
        return (min(b[0] for b in bs), min(b[1] for b in bs),
                max(b[2] for b in bs), max(b[3] for b in bs))

    def point_at(self, s):
        """Point at normalized arc-length parameter s in [0, 1)."""
        target = (s % 1.0) * self.length
        j = int(np.searchsorted(self._cumlen, target, side="right") - 1)
        j = min(j, len(self.pieces) - 1)
        piece = self.pieces[j]
        want = target - self._cumlen[j]
        # invert arc length within the piece by bisection
        t0, t1 = 0.0, 1.0
        for _ in range(50):
            tm = 0.5 * (t0 + t1)
            if piece.subpiece(0.0, tm).arclength() < want:
                t0 = tm
            else:
                t1 = tm
        x, y = piece.point(0.5 * (t0 + t1))
        return float(x), float(y)


def _green_area(piece, x0):
    """Signed area contribution of a piece: integral of (x - x0) dy."""
    k = 6
    t, w = _gauss01(k)
    x, y = piece.point(t)
    _, dy = piece.deriv(t)
    return float(np.sum(w * (x - x0) * dy))


def area(curve):
    """Signed area enclosed by a closed curve (Green's formula)."""
    return curve.signed_area()


def closest_parameter(curve, p):
    """Arc-length parameter in [0, 1) of the curve point nearest to p.

    Ties are broken toward the smallest parameter.
    """
    px, py = p
    cands = []
    best = math.inf
    for j, piece in enumerate(curve.pieces):
        cx = np.array(piece.cx, dtype=float)
        cy = np.array(piece.cy, dtype=float)
        cx[0] -= px
        cy[0] -= py
        dcx = np.array([i * piece.cx[i] for i in range(1, len(piece.cx))])
        dcy = np.array([i * piece.cy[i] for i in range(1, len(piece.cy))])
        poly = np.polynomial.polynomial.polyadd(
            np.polynomial.polynomial.polymul(cx, dcx),
            np.polynomial.polynomial.polymul(cy, dcy))
        ts = np.concatenate((real_roots(poly, 0.0, 1.0), [0.0, 1.0]))
        x, y = piece.point(ts)
        d2 = (x - px) ** 2 + (y - py) ** 2
        for t, d in zip(ts, d2):
            cands.append((float(d), j, float(t)))
            best = min(best, float(d))
    tol = 1e-12 * (1.0 + best)
    s_vals = []
    for d, j, t in cands:
        if d <= best + tol:
            ell = curve._cumlen[j] + curve.pieces[j].subpiece(0.0, t).arclength()
            s_vals.append(ell / curve.length)
    return min(s_vals) % 1.0


class Region:
    """Oriented boundary curves of a regular open set (outer ccw, holes cw)."""

    def __init__(self, curves):
        self.curves = list(curves)
        self.areas = [c.signed_area() for c in self.curves]
        if not self.curves:
            raise GeometryError("region needs at least one curve")

    def bbox(self):
        bs = [c.bbox() for c in self.curves]
        return (min(b[0] for b in bs), min(b[1] for b in bs),
                max(b[2] for b in bs), max(b[3] for b in bs))

    def all_pieces(self):
        for ci, c in enumerate(self.curves):
            for piece in c.pieces:
                yield ci, piece

    def contains(self, p, scale=None):
        """Point membership by parity ray casting with jiggled retries."""
        if scale is None:
            b = self.bbox()
            scale = max(b[2] - b[0], b[3] - b[1])
        jiggles = [(0.0, 0.0), (0.0, 1.1e-7), (0.0, -1.7e-7),
                   (1.3e-7, 7.1e-8), (-9.1e-8, 1.9e-7)]
        for dx, dy in jiggles:
            q = (p[0] + dx * scale, p[1] + dy * scale)
            res = self._parity_ray(q, scale)
            if res is not None:
                return res
        return self.winding_number(p) >= 1

    def _parity_ray(self, p, scale):
        px, py = p
        eps = 1e-11 * scale
        crossings = 0
        for _, piece in self.all_pieces():
            cy = np.array(piece.cy, dtype=float)
            cy[0] -= py
            # cheap reject
            b = piece.bbox()
            if py < b[1] - eps or py > b[3] + eps or b[2] < px - eps:
                continue
            y0 = float(np.polynomial.polynomial.polyval(0.0, cy))
            y1 = float(np.polynomial.polynomial.polyval(1.0, cy))
            if abs(y0) < eps or abs(y1) < eps:
                return None  # ray through a piece joint: retry jiggled
            ts = real_roots(cy, 0.0, 1.0, pad=0.0)
            if ts.size == 0:
                continue
            mids = np.concatenate(([0.0], 0.5 * (ts[1:] + ts[:-1]), [1.0]))
            sy = np.polynomial.polynomial.polyval(mids, cy)
            for i, t in enumerate(ts):
                if sy[i] * sy[i + 1] < 0.0:  # genuine sign change
                    x, _ = piece.point(t)
                    if abs(float(x) - px) < eps:
                        return None
                    if float(x) > px:
                        crossings += 1
                elif abs(sy[i]) < eps or abs(sy[i + 1]) < eps:
                    return None
        return crossings % 2 == 1

    def winding_number(self, p):
        """Total winding of all boundary curves around p (robust fallback)."""
        total = 0.0
        for _, piece in self.all_pieces():
            total += _piece_winding(piece, p)
        return int(round(total / (2.0 * math.pi)))


def _piece_winding(piece, p, depth=0):
    n = 33
    t = np.linspace(0.0, 1.0, n)
    x, y = piece.point(t)
    ang = np.arctan2(y - p[1], x - p[0])
    d = np.diff(ang)
    d = (d + math.pi) % (2.0 * math.pi) - math.pi
    if depth < 8 and np.max(np.abs(d)) > 0.5:
        m = piece.subpiece(0.0, 0.5), piece.subpiece(0.5, 1.0)
        return _piece_winding(m[0], p, depth + 1) + _piece_winding(m[1], p, depth + 1)
    return float(np.sum(d))


# ---------------------------------------------------------------------------
# cell geometry (result of clipping)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    """One directed edge of a cell-boundary cycle.

    kind is 'face' for grid-line segments interior to the domain and
    'boundary' for pieces of the domain boundary.  on_line is (axis, coord)
    when the edge lies on an axis-aligned line (axis 0: vertical x=coord).
    """

    piece: CurvePiece
    kind: str
    curve_id: int = -1
    on_line: tuple = None


class CellGeometry:
    """One connected component of box-and-domain intersection."""

    def __init__(self, edges, volume=None, regular=False):
        self.edges = list(edges)
        if volume is None:
            xs = [e.piece.bbox() for e in self.edges]
            x0 = 0.5 * (min(b[0] for b in xs) + max(b[2] for b in xs))
            volume = sum(_green_area(e.piece, x0) for e in self.edges)
        self.volume = float(volume)
        self.regular = bool(regular)

    def boundary_pieces(self):
        return [e for e in self.edges if e.kind == "boundary"]

    def face_edges(self):
        return [e for e in self.edges if e.kind == "face"]

    def face_intervals(self, box, tol):
        """In-domain intervals of the four sides of `box`.

        Returns {side: [(lo, hi), ...]} with sides 'xlo','xhi','ylo','yhi'.
        """
        return _side_intervals(self.face_edges(), box, tol)

    def wall_intervals(self, box, tol):
        """Intervals of the four sides of `box` lying on the domain boundary.

        Returns {side: [(lo, hi, curve_id), ...]}.
        """
        walls = [e for e in self.edges
                 if e.kind == "boundary" and e.on_line is not None]
        return _side_intervals(walls, box, tol, with_curve=True)

    def boundary_length(self):
        return sum(e.piece.arclength() for e in self.boundary_pieces())


def _side_intervals(edges, box, tol, with_curve=False):
    x0, y0, x1, y1 = box
    sides = {"xlo": (0, x0), "xhi": (0, x1), "ylo": (1, y0), "yhi": (1, y1)}
    out = {s: [] for s in sides}
    for e in edges:
        if e.on_line is None:
            continue
        axis, coord = e.on_line
        for sname, (sa, sc) in sides.items():
            if sa == axis and abs(coord - sc) <= tol:
                xs, ys = e.piece.point(np.array([0.0, 1.0]))
                vals = ys if axis == 0 else xs
                lo, hi = float(min(vals)), float(max(vals))
                lo_b, hi_b = (y0, y1) if axis == 0 else (x0, x1)
                lo, hi = max(lo, lo_b), min(hi, hi_b)
                if hi - lo > tol:
                    out[sname].append((lo, hi, e.curve_id)
                                      if with_curve else (lo, hi))
    for s in out:
        out[s].sort()
    return out


def full_box_cell(box):
    """CellGeometry of an uncut box (all four sides are faces, ccw)."""
    x0, y0, x1, y1 = box
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    lines = [(1, y0), (0, x1), (1, y1), (0, x0)]
    edges = []
    for k in range(4):
        p0, p1 = corners[k], corners[(k + 1) % 4]
        edges.append(Edge(CurvePiece.line(p0, p1), "face", on_line=lines[k]))
    vol = (x1 - x0) * (y1 - y0)
    return CellGeometry(edges, volume=vol, regular=True)


# ---------------------------------------------------------------------------
# clipping
# ---------------------------------------------------------------------------

def clip_to_box(region, box, pieces=None, state_fn=None, tau=None):
    """Connected components of box-interior intersected with the region.

    pieces: optional pre-filtered [(curve_id, piece)] candidates near the box.
    state_fn: optional callable (axis, coord, lo, hi) -> 'in'|'out' giving the
      membership of the open grid-line interval (used by the mesh generator
      to avoid repeated global point queries).
    Raises DegeneracyError when the local arrangement cannot be resolved.
    """
    x0, y0, x1, y1 = box
    h = max(x1 - x0, y1 - y0)
    if tau is None:
        tau = TAU_GEOM_FACTOR * h
    tol = max(tau, 1e-10 * h)

    if pieces is None:
        pieces = []
        for ci, piece in region.all_pieces():
            b = piece.bbox()
            if b[0] <= x1 + tol and b[2] >= x0 - tol and \
               b[1] <= y1 + tol and b[3] >= y0 - tol:
                pieces.append((ci, piece))

    def interval_state(axis, coord, lo, hi):
        if state_fn is not None:
            return state_fn(axis, coord, lo, hi)
        mid = 0.5 * (lo + hi)
        p = (coord, mid) if axis == 0 else (mid, coord)
        return "in" if region.contains(p, scale=h) else "out"

    if not pieces:
        mid = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
        if state_fn is not None:
            inside = interval_state(1, mid[1], x0, x1) == "in"
        else:
            inside = region.contains(mid, scale=h)
        return [full_box_cell(box)] if inside else []

    # 1. in-box sub-pieces of candidate boundary pieces
    bnd_edges = []     # (curve_id, piece, collinear (axis, coord) or None)
    for ci, piece in pieces:
        cuts = {0.0, 1.0}
        for axis, coord in ((0, x0), (0, x1), (1, y0), (1, y1)):
            cuts.update(piece.axis_hits(axis, coord).tolist())
        ts = sorted(cuts)
        for ta, tb in zip(ts[:-1], ts[1:]):
            if tb - ta < 1e-12:
                continue
            tm = 0.5 * (ta + tb)
            xm, ym = piece.point(tm)
            if not (x0 - tol <= xm <= x1 + tol and y0 - tol <= ym <= y1 + tol):
                continue
            sub = piece.subpiece(ta, tb)
            bnd_edges.append((ci, sub, _collinear_side(sub, box, tol)))

    # drop pieces whose interior side points out of the box
    kept = []
    for ci, sub, on_line in bnd_edges:
        if on_line is not None:
            xm, ym = sub.point(0.5)
            dx, dy = sub.direction(0.5)
            q = (float(xm) - dy * 1e-3 * h, float(ym) + dx * 1e-3 * h)
            if not (x0 - tol <= q[0] <= x1 + tol and y0 - tol <= q[1] <= y1 + tol):
                continue
        kept.append(Edge(sub, "boundary", curve_id=ci, on_line=on_line))
    bnd = kept

    # 2. split box sides at boundary endpoints, classify sub-segments
    side_pts = {s: set() for s in range(4)}  # ylo, xhi, yhi, xlo
    side_defs = [(1, y0, x0, x1, False), (0, x1, y0, y1, False),
                 (1, y1, x0, x1, True), (0, x0, y0, y1, True)]
    wall_ivals = {s: [] for s in range(4)}
    for e in bnd:
        for t_end in (0.0, 1.0):
            px, py = e.piece.point(t_end)
            px, py = _snap_corner(float(px), float(py), box, tol)
            for s, (axis, coord, lo, hi, _) in enumerate(side_defs):
                pos = py if axis == 0 else px
                off = abs((px if axis == 0 else py) - coord)
                if off <= tol and lo - tol <= pos <= hi + tol:
                    side_pts[s].add(min(max(pos, lo), hi))
        if e.on_line is not None:
            axis, coord = e.on_line
            for s, (sa, sc, lo, hi, _) in enumerate(side_defs):
                if sa == axis and abs(coord - sc) <= tol:
                    xs, ys = e.piece.point(np.array([0.0, 1.0]))
                    vals = ys if axis == 0 else xs
                    wall_ivals[s].append((float(min(vals)), float(max(vals))))

    face_edges = []
    for s, (axis, coord, lo, hi, rev) in enumerate(side_defs):
        pts = sorted(side_pts[s] | {lo, hi})
        for a, b in zip(pts[:-1], pts[1:]):
            if b - a <= tol:
                continue
            mid = 0.5 * (a + b)
            if any(wl - tol <= mid <= wh + tol for wl, wh in wall_ivals[s]):
                continue  # this part of the side lies on the domain boundary
            if interval_state(axis, coord, a, b) != "in":
                continue
            if axis == 0:
                p0, p1 = (coord, a), (coord, b)
            else:
                p0, p1 = (a, coord), (b, coord)
            if rev:
                p0, p1 = p1, p0
            face_edges.append(Edge(CurvePiece.line(p0, p1), "face",
                                   on_line=(axis, coord)))

    edges = bnd + face_edges
    if not edges:
        return []

    cycles = _walk_cycles(edges, box, tol)
    cells = []
    for cyc in cycles:
        xc = 0.5 * (x0 + x1)
        vol = sum(_green_area(e.piece, xc) for e in cyc)
        if vol < -1e-9 * h * h:
            raise DegeneracyError(
                "negative boundary cycle: interior hole unresolved at h")
        if vol <= 1e-12 * h * h:
            continue
        regular = all(e.on_line is not None for e in cyc) and \
            abs(vol - (x1 - x0) * (y1 - y0)) <= 1e-9 * h * h
        cells.append(CellGeometry(cyc, volume=vol, regular=regular))
    return cells


def _collinear_side(piece, box, tol):
    """(axis, coord) if the piece lies along one of the box side lines."""
    x0, y0, x1, y1 = box
    ts = np.array([0.0, 0.37, 0.71, 1.0])
    x, y = piece.point(ts)
    for coord in (x0, x1):
        if np.all(np.abs(x - coord) <= tol):
            return (0, coord)
    for coord in (y0, y1):
        if np.all(np.abs(y - coord) <= tol):
            return (1, coord)
    return None


def _snap_corner(px, py, box, tol):
    x0, y0, x1, y1 = box
    sx = x0 if abs(px - x0) <= tol else (x1 if abs(px - x1) <= tol else px)
    sy = y0 if abs(py - y0) <= tol else (y1 if abs(py - y1) <= tol else py)
    return sx, sy


def _walk_cycles(edges, box, tol):
    """Stitch directed edges into ccw boundary cycles.

    Every edge has the enclosed component on its left; at each node the
    successor of an incoming edge is the outgoing edge with the smallest
    clockwise angle from the reversed incoming direction.
    """
    nodes = []

    def node_id(p):
        px, py = _snap_corner(p[0], p[1], box, tol)
        for k, (qx, qy) in enumerate(nodes):
            if abs(qx - px) <= tol and abs(qy - py) <= tol:
                return k
        nodes.append((px, py))
        return len(nodes) - 1

    start = [node_id(e.piece.start()) for e in edges]
    end = [node_id(e.piece.end()) for e in edges]
    outs = {}
    ins = {}
    for i, e in enumerate(edges):
        outs.setdefault(start[i], []).append(i)
        ins.setdefault(end[i], []).append(i)

    succ = {}
    for v in set(list(outs) + list(ins)):
        vin = ins.get(v, [])
        vout = outs.get(v, [])
        if len(vin) != len(vout):
            raise DegeneracyError(
                f"open arrangement at node {nodes[v]}: "
                f"{len(vin)} in / {len(vout)} out")
        taken = set()
        for i in vin:
            ux, uy = edges[i].piece.direction(1.0, at_end=True)
            ra = math.atan2(-uy, -ux)
            best, best_ang = None, math.inf
            for j in vout:
                wx, wy = edges[j].piece.direction(0.0)
                ang = (ra - math.atan2(wy, wx)) % (2.0 * math.pi)
                if ang < best_ang - 1e-12 or (abs(ang - best_ang) <= 1e-12
                                              and (best is None or j < best)):
                    if j in taken:
                        continue
                    best, best_ang = j, ang
            if best is None:
                raise DegeneracyError(f"no continuation at node {nodes[v]}")
            succ[i] = best
            taken.add(best)

    used = [False] * len(edges)
    cycles = []
    for i0 in range(len(edges)):
        if used[i0]:
            continue
        cyc = []
        i = i0
        while not used[i]:
            used[i] = True
            cyc.append(edges[i])
            i = succ[i]
        if i != i0:
            raise DegeneracyError("boundary walk did not close")
        cycles.append(cyc)
    return cycles


# ---------------------------------------------------------------------------
# regularized union
# ---------------------------------------------------------------------------

def regularized_union(a, b, h, tau=None):
    """Merge two adjacent cell geometries, removing shared face segments.

    The closures must share at least one face sub-interval of length > tol;
    otherwise NotAdjacentError is raised.
    """
    if tau is None:
        tau = TAU_GEOM_FACTOR * h
    tol = max(tau, 1e-10 * h)

    ea = list(a.edges)
    eb = list(b.edges)
    cancel_a = [[] for _ in ea]   # intervals to remove, per edge
    cancel_b = [[] for _ in eb]
    shared = 0.0
    for i, e1 in enumerate(ea):
        if e1.kind != "face":
            continue
        ax1, c1 = e1.on_line
        (p1x, p1y), (q1x, q1y) = e1.piece.start(), e1.piece.end()
        lo1, hi1 = sorted((p1y, q1y) if ax1 == 0 else (p1x, q1x))
        for j, e2 in enumerate(eb):
            if e2.kind != "face":
                continue
            ax2, c2 = e2.on_line
            if ax2 != ax1 or abs(c1 - c2) > tol:
                continue
            (p2x, p2y), (q2x, q2y) = e2.piece.start(), e2.piece.end()
            lo2, hi2 = sorted((p2y, q2y) if ax1 == 0 else (p2x, q2x))
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if hi - lo > tol:
                shared += hi - lo
                cancel_a[i].append((lo, hi))
                cancel_b[j].append((lo, hi))
    if shared <= tol:
        raise NotAdjacentError("cell closures share no face interval")

    def surviving(edges, cancels):
        out = []
        for e, cuts in zip(edges, cancels):
            if not cuts:
                out.append(e)
                continue
            axis, coord = e.on_line
            (px, py), (qx, qy) = e.piece.start(), e.piece.end()
            s0, s1 = (py, qy) if axis == 0 else (px, qx)
            forward = s1 >= s0
            lo, hi = min(s0, s1), max(s0, s1)
            keep = [(lo, hi)]
            for cl, ch in cuts:
                nxt = []
                for kl, kh in keep:
                    if ch <= kl + tol or cl >= kh - tol:
                        nxt.append((kl, kh))
                        continue
                    if cl - kl > tol:
                        nxt.append((kl, cl))
                    if kh - ch > tol:
                        nxt.append((ch, kh))
                keep = nxt
            for kl, kh in keep:
                if kh - kl <= tol:
                    continue
                aa, bb = (kl, kh) if forward else (kh, kl)
                if axis == 0:
                    p0, p1 = (coord, aa), (coord, bb)
                else:
                    p0, p1 = (aa, coord), (bb, coord)
                out.append(Edge(CurvePiece.line(p0, p1), "face",
                                on_line=(axis, coord)))
        return out

    edges = surviving(ea, cancel_a) + surviving(eb, cancel_b)
    box = _edges_bbox(edges)
    cycles = _walk_cycles(edges, box, tol)
    cycles = [c for c in cycles if abs(_cycle_area(c)) > 1e-12 * h * h]
    if len(cycles) != 1:
        raise NotAdjacentError(
            f"union produced {len(cycles)} boundary cycles")
    vol = _cycle_area(cycles[0])
    if abs(vol - (a.volume + b.volume)) > 1e-8 * h * h:
        raise GeometryError("union volume is not additive")
    return CellGeometry(cycles[0], volume=vol, regular=False)


def _edges_bbox(edges):
    bs = [e.piece.bbox() for e in edges]
    return (min(b[0] for b in bs), min(b[1] for b in bs),
            max(b[2] for b in bs), max(b[3] for b in bs))


def _cycle_area(cyc):
    bs = _edges_bbox(cyc)
    xc = 0.5 * (bs[0] + bs[2])
    return sum(_green_area(e.piece, xc) for e in cyc)


# ---------------------------------------------------------------------------
# boundary input files
# ---------------------------------------------------------------------------

def region_from_text(text):
    """Parse the boundary file format:

    curve ccw|cw
    line x0 y0 x1 y1
    cubic x0 y0 x1 y1 x2 y2 x3 y3   (Bezier control points)
    """
    curves = []
    pieces = []
    orient = None

    def flush():
        nonlocal pieces, orient
        if pieces:
            c = JordanCurve(pieces)
            a = c.signed_area()
            want = 1.0 if orient == "ccw" else -1.0
            if a * want < 0:
                raise GeometryError(
                    f"curve declared {orient} but signed area is {a:g}")
            curves.append(c)
        pieces = []

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "curve":
            flush()
            orient = tok[1]
            if orient not in ("ccw", "cw"):
                raise GeometryError(f"bad orientation {orient!r}")
        elif tok[0] == "line":
            v = [float(s) for s in tok[1:]]
            if len(v) != 4:
                raise GeometryError("line needs 4 numbers")
            pieces.append(CurvePiece.line(v[:2], v[2:]))
        elif tok[0] == "cubic":
            v = [float(s) for s in tok[1:]]
            if len(v) != 8:
                raise GeometryError("cubic needs 8 numbers")
            pieces.append(CurvePiece.cubic_bezier(v[0:2], v[2:4], v[4:6], v[6:8]))
        else:
            raise GeometryError(f"unknown directive {tok[0]!r}")
    flush()
    return Region(curves)


def region_from_file(path):
    with open(path) as f:
        return region_from_text(f.read())
