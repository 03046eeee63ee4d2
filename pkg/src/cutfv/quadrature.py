"""Moments and integrals over cut cells, cut faces, and cut boundaries.

Volume integrals go through Green's theorem: the primitive of a scaled
monomial is again a monomial, so cell moments are line integrals of
polynomials and evaluate to machine precision with Gauss rules.  Boundary
averages carry the arc-length measure and use fixed-order Gauss with one
adaptive doubling as a safety net.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class QuadratureError(Exception):
    pass


_RULES: dict = {}


def gauss_rule(k):
    """Gauss-Legendre nodes and weights on (-1, 1), exact to degree 2k-1."""
    if not 1 <= k <= 16:
        raise QuadratureError(f"unsupported Gauss order {k}")
    if k not in _RULES:
        _RULES[k] = np.polynomial.legendre.leggauss(k)
    return _RULES[k]


def gauss01(k):
    x, w = gauss_rule(k)
    return 0.5 * (x + 1.0), 0.5 * w


def basis_exponents(n):
    """Graded-lexicographic exponents of the 2D monomial basis, |a| <= n."""
    out = []
    for d in range(n + 1):
        for a1 in range(d, -1, -1):
            out.append((a1, d - a1))
    return out


@dataclass
class MomentTable:
    """Normalized scaled-monomial averages attached to one cut cell."""

    center: tuple
    h: float
    degree: int
    cell: dict = field(default_factory=dict)
    boundary_value: np.ndarray = None
    boundary_normal: np.ndarray = None
    boundary_length: float = 0.0


# ---------------------------------------------------------------------------
# cell moments
# ---------------------------------------------------------------------------

def cell_moments(cell, p, h, n):
    """Averages of ((x-p)/h)^a ((y-p)/h)^b over a cut cell, |a|+|b| <= n.

    Exact (up to roundoff) for line and cubic boundary pieces since the
    Green integrand is polynomial in the curve parameter.
    """
    if n > 8:
        raise QuadratureError("moment degree limited to 8")
    px, py = p
    order = {True: 8, False: 16}
    acc = np.zeros((n + 2, n + 1))
    for edge in cell.edges:
        piece = edge.piece
        t, w = gauss01(order[piece.is_line])
        x, y = piece.point(t)
        _, dy = piece.deriv(t)
        xs = (x - px) / h
        ys = (y - py) / h
        xp = np.vander(xs, n + 2, increasing=True).T  # xp[k] = xs**k
        yp = np.vander(ys, n + 1, increasing=True).T
        wdy = w * dy
        acc += np.einsum("it,jt,t->ij", xp, yp, wdy)
    out = {}
    for a, b in basis_exponents(n):
        out[(a, b)] = float(acc[a + 1, b] * h / ((a + 1) * cell.volume))
    return out


def box_moments(box, p, h, n):
    """Analytic scaled-monomial averages over an axis-aligned box."""
    x0, y0, x1, y1 = box
    px, py = p
    ex0, ex1 = (x0 - px) / h, (x1 - px) / h
    ey0, ey1 = (y0 - py) / h, (y1 - py) / h
    vol = (x1 - x0) * (y1 - y0)
    ix = [h * (ex1 ** (k + 1) - ex0 ** (k + 1)) / (k + 1) for k in range(n + 1)]
    iy = [h * (ey1 ** (k + 1) - ey0 ** (k + 1)) / (k + 1) for k in range(n + 1)]
    return {(a, b): ix[a] * iy[b] / vol for a, b in basis_exponents(n)}


# ---------------------------------------------------------------------------
# face and boundary averages
# ---------------------------------------------------------------------------

def face_average(piece, phi, k=6):
    """Length-normalized average of phi(x, y) over a curve piece."""
    t, w = gauss01(k)
    x, y = piece.point(t)
    dx, dy = piece.deriv(t)
    ds = np.hypot(dx, dy)
    length = float(np.sum(w * ds))
    if length <= 0.0:
        raise QuadratureError("zero-length piece")
    return float(np.sum(w * phi(x, y) * ds) / length)


def segment_average(p0, p1, phi, k=6):
    """Average of phi along the straight segment p0 -> p1."""
    t, w = gauss01(k)
    x = p0[0] + (p1[0] - p0[0]) * t
    y = p0[1] + (p1[1] - p0[1]) * t
    return float(np.sum(w * phi(x, y)))


def _monomial_eval(exponents, xs, ys):
    n = max(a + b for a, b in exponents)
    xp = np.vander(xs, n + 1, increasing=True).T
    yp = np.vander(ys, n + 1, increasing=True).T
    return np.stack([xp[a] * yp[b] for a, b in exponents])


def boundary_basis_averages(pieces, exponents, p, h, op="value",
                            robin=(0.0, 0.0), k=6, check_tol=1e-11):
    """Boundary averages of all scaled monomials over the given pieces.

    op 'value' gives the Dirichlet column, 'normal' the outward-normal
    derivative column (interior on the left of traversal), 'robin' the
    combination robin[0]*value + robin[1]*normal.  Returns (averages, length).
    """
    def run(kk):
        px, py = p
        t, w = gauss01(kk)
        num = None
        length = 0.0
        for piece in pieces:
            x, y = piece.point(t)
            dx, dy = piece.deriv(t)
            ds = np.hypot(dx, dy)
            length += float(np.sum(w * ds))
            xs = (x - px) / h
            ys = (y - py) / h
            if op in ("value", "robin"):
                vals = _monomial_eval(exponents, xs, ys)
                v = vals @ (w * ds)
            if op in ("normal", "robin"):
                nx = np.vander(xs, 10, increasing=True).T
                ny = np.vander(ys, 10, increasing=True).T
                # n ds dt = (dy, -dx) dt, so no arc-length division appears
                gn = np.stack([
                    (a * nx[a - 1] * ny[b] * dy - b * nx[a] * ny[b - 1] * dx) / h
                    if a + b > 0 else np.zeros_like(dx)
                    for a, b in exponents])
                g = gn @ w
            if op == "value":
                contrib = v
            elif op == "normal":
                contrib = g
            else:
                contrib = robin[0] * v + robin[1] * g
            num = contrib if num is None else num + contrib
        if length <= 0.0:
            raise QuadratureError("zero-length boundary")
        return num / length, length

    avg, length = run(k)
    if any(not piece.is_line for piece in pieces):
        avg2, length2 = run(2 * k)
        scale = np.max(np.abs(avg2)) + 1e-30
        if np.max(np.abs(avg - avg2)) > check_tol * scale:
            avg, length = avg2, length2
    return avg, length


def boundary_function_average(pieces, g, k=8):
    """Length-normalized average of a callable over boundary pieces."""
    t, w = gauss01(k)
    num = 0.0
    length = 0.0
    for piece in pieces:
        x, y = piece.point(t)
        dx, dy = piece.deriv(t)
        ds = np.hypot(dx, dy)
        num += float(np.sum(w * g(x, y) * ds))
        length += float(np.sum(w * ds))
    return num / length, length


# ---------------------------------------------------------------------------
# averages of general smooth fields
# ---------------------------------------------------------------------------

def integrate_average(cell, f, k=10):
    """Cell average of a smooth scalar field over a cut cell.

    Green's theorem with a numerically accumulated primitive
    F(x, y) = int_{xi0}^{x} f(xi, y) dxi; xi0 is the bounding-box center.
    """
    bs = [e.piece.bbox() for e in cell.edges]
    xi0 = 0.5 * (min(b[0] for b in bs) + max(b[2] for b in bs))
    tb, wb = gauss01(k)
    ti, wi = gauss01(k)
    total = 0.0
    for edge in cell.edges:
        piece = edge.piece
        x, y = piece.point(tb)
        _, dy = piece.deriv(tb)
        # primitive at each boundary node: Gauss over [xi0, x]
        span = x - xi0
        xi = xi0 + np.outer(span, ti)
        fy = f(xi, np.repeat(y[:, None], len(ti), axis=1))
        prim = span * (fy @ wi)
        total += float(np.sum(wb * prim * dy))
    return total / cell.volume


def box_averages(boxes, f, k=6):
    """Averages of f over many axis-aligned boxes at once (tensor Gauss).

    boxes: (m, 4) array of (x0, y0, x1, y1).  Returns (m,) averages.
    """
    boxes = np.asarray(boxes, dtype=float)
    t, w = gauss01(k)
    x0, y0, x1, y1 = boxes.T
    xs = x0[:, None] + (x1 - x0)[:, None] * t
    ys = y0[:, None] + (y1 - y0)[:, None] * t
    xx = xs[:, :, None]
    yy = ys[:, None, :]
    vals = f(np.broadcast_to(xx, (len(boxes), k, k)),
             np.broadcast_to(yy, (len(boxes), k, k)))
    return np.einsum("mij,i,j->m", vals, w, w)
