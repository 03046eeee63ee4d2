"""Built-in problem domains and cubic fitting of analytic boundary curves.

Grid-independent boundary representations: the same fitted spline is reused
for every grid size so that convergence studies see one fixed geometry.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import CurvePiece, JordanCurve, Region

FIT_TOL = 1e-10  # max geometric deviation of fitted cubics


def square_region(x0=0.0, y0=0.0, size=1.0):
    c = [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)]
    pieces = [CurvePiece.line(c[k], c[(k + 1) % 4]) for k in range(4)]
    return Region([JordanCurve(pieces)])


def unit_square_region():
    return square_region(0.0, 0.0, 1.0)


def rotated_square_region(angle=math.pi / 6.0):
    ca, sa = math.cos(angle), math.sin(angle)
    rot = lambda p: (ca * p[0] - sa * p[1], sa * p[0] + ca * p[1])
    c = [rot(p) for p in [(0, 0), (1, 0), (1, 1), (0, 1)]]
    pieces = [CurvePiece.line(c[k], c[(k + 1) % 4]) for k in range(4)]
    return Region([JordanCurve(pieces)])


# ---------------------------------------------------------------------------
# cubic fitting of analytic arcs
# ---------------------------------------------------------------------------

def _bernstein(u):
    u = np.asarray(u)
    v = 1.0 - u
    return v ** 3, 3.0 * v * v * u, 3.0 * v * u * u, u ** 3


def _end_data(param_fn, s, span, deriv_fn=None):
    """Point, unit tangent, and signed curvature at parameter s."""
    p0 = np.array(param_fn(s))
    if deriv_fn is not None:
        d1, d2 = (np.array(v) for v in deriv_fn(s))
    else:
        ds = max(abs(span) * 1e-3, 1e-5)
        pm = np.array(param_fn(s - ds))
        pp = np.array(param_fn(s + ds))
        d1 = (pp - pm) / (2.0 * ds)
        d2 = (pp - 2.0 * p0 + pm) / (ds * ds)
    speed = np.hypot(*d1)
    kappa = (d1[0] * d2[1] - d1[1] * d2[0]) / speed ** 3
    return p0, d1 / speed, float(kappa)


def _fit_single(param_fn, s0, s1, n_samples=32, deriv_fn=None):
    """Curvature-matching G1 cubic on [s0, s1] (geometric Hermite fit).

    Tangent magnitudes solve the endpoint-curvature conditions by Newton;
    the achieved deviation is measured by point projection of samples.
    """
    span = s1 - s0
    p0, t0, k0 = _end_data(param_fn, s0, span, deriv_fn)
    p3, tf, k1 = _end_data(param_fn, s1, span, deriv_fn)
    t3 = -tf  # stored backward: P2 = P3 + b*t3
    delta = p3 - p0
    cross = lambda u, v: u[0] * v[1] - u[1] * v[0]
    c0d = cross(t0, delta)
    c3d = cross(t3, delta)
    c03 = cross(t0, t3)
    a = b = float(np.hypot(*delta)) / 3.0
    for _ in range(30):
        f1 = 1.5 * a * a * k0 - c0d - b * c03
        f2 = 1.5 * b * b * k1 - c3d - a * c03
        j11, j12 = 3.0 * a * k0, -c03
        j21, j22 = -c03, 3.0 * b * k1
        det = j11 * j22 - j12 * j21
        if abs(det) < 1e-300:
            break
        da = (f1 * j22 - f2 * j12) / det
        db = (j11 * f2 - j21 * f1) / det
        a, b = a - da, b - db
        if abs(da) + abs(db) < 1e-15 * (abs(a) + abs(b) + 1e-30):
            break
    chord = float(np.hypot(*delta))
    if not (0.0 < a < 3.0 * chord and 0.0 < b < 3.0 * chord):
        a = b = chord / 3.0  # near-straight or Newton failure: plain Hermite
    piece = CurvePiece.cubic_bezier(p0, p0 + a * t0, p3 + b * t3, p3)

    ss = np.linspace(s0, s1, n_samples + 2)[1:-1]
    pts = np.array([param_fn(s) for s in ss])
    u = (ss - s0) / span
    for _ in range(6):
        x, y = piece.point(u)
        dx, dy = piece.deriv(u)
        ex, ey = x - pts[:, 0], y - pts[:, 1]
        u = np.clip(u - (ex * dx + ey * dy)
                    / np.maximum(dx * dx + dy * dy, 1e-30), 0.0, 1.0)
    x, y = piece.point(u)
    dev = float(np.max(np.hypot(x - pts[:, 0], y - pts[:, 1])))
    return piece, dev


def fit_parametric(param_fn, s0, s1, tol=FIT_TOL, max_depth=14, deriv_fn=None):
    """Fit cubic pieces to (x(s), y(s)) on [s0, s1] within max deviation tol."""
    piece, dev = _fit_single(param_fn, s0, s1, deriv_fn=deriv_fn)
    if dev <= tol or max_depth == 0:
        if dev > tol:
            raise RuntimeError(f"curve fit stalled at deviation {dev:g}")
        return [piece]
    sm = 0.5 * (s0 + s1)
    return (fit_parametric(param_fn, s0, sm, tol, max_depth - 1, deriv_fn)
            + fit_parametric(param_fn, sm, s1, tol, max_depth - 1, deriv_fn))


def bezier_arc(center, r, a0, a1):
    """Standard cubic approximation of a ccw circular arc (a1 > a0)."""
    k = (4.0 / 3.0) * math.tan(0.25 * (a1 - a0))
    cx, cy = center
    p0 = (cx + r * math.cos(a0), cy + r * math.sin(a0))
    p3 = (cx + r * math.cos(a1), cy + r * math.sin(a1))
    d0 = (-math.sin(a0), math.cos(a0))
    d3 = (-math.sin(a1), math.cos(a1))
    p1 = (p0[0] + k * r * d0[0], p0[1] + k * r * d0[1])
    p2 = (p3[0] - k * r * d3[0], p3[1] - k * r * d3[1])
    return CurvePiece.cubic_bezier(p0, p1, p2, p3)


def fit_arc(center, r, a0, a1, tol=FIT_TOL):
    """Circular arc (ccw) as cubic pieces with radial deviation <= tol."""
    n = 1
    while True:
        pieces = [bezier_arc(center, r, a0 + (a1 - a0) * j / n,
                             a0 + (a1 - a0) * (j + 1) / n) for j in range(n)]
        dev = 0.0
        t = np.linspace(0.0, 1.0, 41)
        for p in pieces:
            x, y = p.point(t)
            dev = max(dev, float(np.max(np.abs(
                np.hypot(x - center[0], y - center[1]) - r))))
        if dev <= tol:
            return pieces
        n *= 2
        if n > 4096:
            raise RuntimeError("arc fit did not converge")


def circle_region(center=(0.0, 0.0), r=1.0, tol=FIT_TOL, hole=False):
    pieces = fit_arc(center, r, 0.0, 2.0 * math.pi, tol)
    if hole:
        pieces = [p.reversed_() for p in reversed(pieces)]
    return Region([JordanCurve(pieces)])


# ---------------------------------------------------------------------------
# flower and four-disk domains
# ---------------------------------------------------------------------------

def flower_radius(theta):
    return 0.25 + 0.05 * np.cos(6.0 * np.asarray(theta))


def flower_region(tol=FIT_TOL):
    """(-0.5, 0.5)^2 minus the flower r < 0.25 + 0.05 cos 6*theta."""

    def param(th):
        r = 0.25 + 0.05 * math.cos(6.0 * th)
        return (r * math.cos(th), r * math.sin(th))

    def deriv(th):
        c, s = math.cos(th), math.sin(th)
        r = 0.25 + 0.05 * math.cos(6.0 * th)
        r1 = -0.3 * math.sin(6.0 * th)
        r2 = -1.8 * math.cos(6.0 * th)
        d1 = (r1 * c - r * s, r1 * s + r * c)
        d2 = (r2 * c - 2.0 * r1 * s - r * c, r2 * s + 2.0 * r1 * c - r * s)
        return d1, d2

    # fit one petal period and rotate; keeps the fit cheap and symmetric
    period = math.pi / 3.0
    base = fit_parametric(param, 0.0, period, tol, deriv_fn=deriv)
    pieces = list(base)
    for k in range(1, 6):
        ca, sa = math.cos(k * period), math.sin(k * period)
        for p in base:
            cx = tuple(ca * a - sa * b for a, b in zip(p.cx, p.cy))
            cy = tuple(sa * a + ca * b for a, b in zip(p.cx, p.cy))
            pieces.append(CurvePiece(cx, cy))
    # close the chain exactly
    pieces[-1] = _pin_endpoint(pieces[-1], pieces[0].start())
    hole = [p.reversed_() for p in reversed(pieces)]
    outer = square_region(-0.5, -0.5, 1.0).curves[0]
    return Region([outer, JordanCurve(hole)])


def _pin_endpoint(piece, target):
    """Shift the last Bezier endpoint onto target (sub-tolerance nudge)."""
    ex, ey = piece.end()
    cx = list(piece.cx)
    cy = list(piece.cy)
    cx[-1] += target[0] - ex
    cy[-1] += target[1] - ey
    return CurvePiece(tuple(cx), tuple(cy))


FOUR_DISKS = [((0.5, 0.5), 0.2),
              ((0.5, 0.735), 0.1),
              ((0.2965, 0.3825), 0.1),
              ((0.7035, 0.3825), 0.1)]


def four_disks_region(tol=FIT_TOL):
    """(0,1)^2 minus the closed union of four overlapping disks.

    Each small disk overlaps only the central one; the union boundary is a
    single Jordan curve with six kinks at the circle intersections.
    """
    (c0, r0) = FOUR_DISKS[0]
    events = []  # (enter_angle, exit_angle, k) of small-disk overlap on C0
    for k, (ck, rk) in enumerate(FOUR_DISKS[1:], start=1):
        d = math.hypot(ck[0] - c0[0], ck[1] - c0[1])
        alpha = math.atan2(ck[1] - c0[1], ck[0] - c0[0])
        delta0 = math.acos((d * d + r0 * r0 - rk * rk) / (2.0 * d * r0))
        events.append((alpha - delta0, alpha + delta0, k, ck, rk, d, alpha))
    events.sort(key=lambda e: e[0])

    pieces = []
    for idx, ev in enumerate(events):
        a_in, a_out, k, ck, rk, d, alpha = ev
        nxt = events[(idx + 1) % len(events)]
        # outer arc of the small circle, ccw from the entry kink around the
        # far side: the entry kink sits at beta + deltak seen from ck
        deltak = math.acos((d * d + rk * rk - r0 * r0) / (2.0 * d * rk))
        beta = math.atan2(c0[1] - ck[1], c0[0] - ck[0])  # toward big center
        b_start, b_end = beta + deltak, beta + 2.0 * math.pi - deltak
        p_in = (c0[0] + r0 * math.cos(a_in), c0[1] + r0 * math.sin(a_in))
        q = (ck[0] + rk * math.cos(b_start), ck[1] + rk * math.sin(b_start))
        if math.hypot(q[0] - p_in[0], q[1] - p_in[1]) > 1e-9:
            raise RuntimeError("disk intersection bookkeeping failed")
        pieces.extend(fit_arc(ck, rk, b_start, b_end, tol))
        # arc of the big circle from this exit kink to the next entry kink
        g0, g1 = a_out, nxt[0]
        if g1 <= g0:
            g1 += 2.0 * math.pi
        pieces.extend(fit_arc(c0, r0, g0, g1, tol))

    # snap successive endpoints (kinks are exact, fits are within tol)
    closed = []
    for j, p in enumerate(pieces):
        if j > 0:
            p = _pin_startpoint(p, closed[-1].end())
        closed.append(p)
    closed[-1] = _pin_endpoint(closed[-1], closed[0].start())
    hole = [p.reversed_() for p in reversed(closed)]
    outer = square_region(0.0, 0.0, 1.0).curves[0]
    return Region([outer, JordanCurve(hole)])


def _pin_startpoint(piece, target):
    sx, sy = piece.start()
    cx = list(piece.cx)
    cy = list(piece.cy)
    cx[0] += target[0] - sx
    cy[0] += target[1] - sy
    return CurvePiece(tuple(cx), tuple(cy))
