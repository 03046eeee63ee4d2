"""Cut-cell meshes: cut a domain by a Cartesian grid, then merge cells.

generate() clips the domain against every grid box (with a line-state cache
so bulk cells never trigger global point queries); merge() reduces each cell
to one connected component and absorbs small volume fractions into the
neighbor whose merged volume fraction lands closest to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CellGeometry,
    DegeneracyError,
    clip_to_box,
    full_box_cell,
    regularized_union,
)


class CutCellError(Exception):
    pass


class UnresolvedTopologyError(CutCellError):
    """A cell still has several components after the first merge pass."""


class IsolatedSliverError(CutCellError):
    """A small cell or component has no adjacent merge target."""


@dataclass
class CutCell:
    index: tuple
    kind: str                  # 'regular' | 'irregular'
    volume: float
    geom: CellGeometry = None  # None for regular cells (implied full box)
    walls: dict = field(default_factory=dict)
    merged_from: frozenset = frozenset()


class RawCutMap:
    """Per-cell connected components, before merging."""

    def __init__(self, region, rect, h, components):
        self.region = region
        self.rect = rect
        self.h = h
        self.components = components
        x0, y0, x1, y1 = rect
        self.shape = (int(round((x1 - x0) / h)), int(round((y1 - y0) / h)))


class CutCellSet:
    """Merged cut cells over a uniform grid."""

    def __init__(self, region, rect, h, eps, cells, forward):
        self.region = region
        self.rect = rect
        self.h = h
        self.eps = eps
        self.cells = cells
        self.forward = forward
        x0, y0, x1, y1 = rect
        self.origin = (x0, y0)
        self.shape = (int(round((x1 - x0) / h)), int(round((y1 - y0) / h)))

    def box(self, idx):
        i, j = idx
        x0, y0 = self.origin
        return (x0 + i * self.h, y0 + j * self.h,
                x0 + (i + 1) * self.h, y0 + (j + 1) * self.h)

    def center(self, idx):
        b = self.box(idx)
        return (0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]))

    def resolve(self, idx):
        """Surviving index owning idx (follows merge forwarding)."""
        seen = set()
        while idx in self.forward:
            if idx in seen:
                raise CutCellError("forwarding cycle")
            seen.add(idx)
            idx = self.forward[idx]
        return idx

    def geometry(self, idx):
        cell = self.cells[idx]
        return cell.geom if cell.geom is not None else full_box_cell(self.box(idx))

    def is_regular(self, idx):
        c = self.cells.get(idx)
        return c is not None and c.kind == "regular"

    def total_volume(self):
        return sum(c.volume for c in self.cells.values())

    def counts(self):
        reg = sum(1 for c in self.cells.values() if c.kind == "regular")
        return {"regular": reg, "irregular": len(self.cells) - reg}


# ---------------------------------------------------------------------------
# line-state cache
# ---------------------------------------------------------------------------

class _LineStates:
    """Membership of grid-line intervals, one decomposition per line.

    Lines are keyed by (axis, k) with coordinate origin + k*h/2, so both
    grid lines (even k) and cell-center lines (odd k) are covered.
    """

    def __init__(self, region, origin, h):
        self.region = region
        self.origin = origin
        self.h = h
        self.scale = h
        self._lines = {}
        self._pieces = [piece for _, piece in region.all_pieces()]
        self._bboxes = [p.bbox() for p in self._pieces]

    def _build(self, axis, k):
        coord = self.origin[axis] + 0.5 * k * self.h
        tol = 1e-9 * self.h
        breaks = []
        walls = []
        for piece, bb in zip(self._pieces, self._bboxes):
            lo, hi = (bb[0], bb[2]) if axis == 0 else (bb[1], bb[3])
            if coord < lo - tol or coord > hi + tol:
                continue
            ts = np.array([0.0, 0.31, 0.5, 0.77, 1.0])
            x, y = piece.point(ts)
            c_along = x if axis == 0 else y
            other = y if axis == 0 else x
            if np.all(np.abs(c_along - coord) <= tol):
                walls.append((float(other.min()), float(other.max())))
                continue
            for t in piece.axis_hits(axis, coord):
                ox, oy = piece.point(t)
                breaks.append(float(oy if axis == 0 else ox))
            # tangential joints: endpoints on the line may not show as roots
            for tend in (0, -1):
                if abs(c_along[tend] - coord) <= tol:
                    breaks.append(float(other[tend]))
        for wl, wh in walls:
            breaks.extend([wl, wh])
        breaks = sorted(set(np.round(np.array(breaks) / tol) * tol))
        states = []
        for a, b in zip([-np.inf] + breaks, breaks + [np.inf]):
            if np.isinf(a):
                mid = (b - self.h) if np.isfinite(b) else 0.0
            elif np.isinf(b):
                mid = a + self.h
            else:
                if b - a <= tol:
                    states.append("out")
                    continue
                mid = 0.5 * (a + b)
            if any(wl - tol <= mid <= wh + tol for wl, wh in walls):
                states.append("bd")
                continue
            p = (coord, mid) if axis == 0 else (mid, coord)
            states.append("in" if self.region.contains(p, scale=self.scale)
                          else "out")
        return np.array([-np.inf] + breaks), states

    def state(self, axis, coord, lo, hi):
        k = int(round((coord - self.origin[axis]) / (0.5 * self.h)))
        key = (axis, k)
        if key not in self._lines:
            self._lines[key] = self._build(axis, k)
        edges, states = self._lines[key]
        mid = 0.5 * (lo + hi)
        g = int(np.searchsorted(edges, mid, side="right") - 1)
        s = states[min(max(g, 0), len(states) - 1)]
        return "out" if s == "bd" else s


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _bin_pieces(region, rect, h, shape):
    """Map each grid cell to the boundary pieces passing near it."""
    x0, y0, _, _ = rect
    nx, ny = shape
    bins = {}
    stack = [(ci, piece, 0.0, 1.0, 0)
             for ci, piece in region.all_pieces()]
    eps = 1e-9 * h
    while stack:
        ci, piece, ta, tb, depth = stack.pop()
        sub = piece.subpiece(ta, tb) if (ta, tb) != (0.0, 1.0) else piece
        bx0, by0, bx1, by1 = sub.bbox()
        if bx1 - bx0 > 1.5 * h or by1 - by0 > 1.5 * h:
            if depth < 16:
                tm = 0.5 * (ta + tb)
                stack.append((ci, piece, ta, tm, depth + 1))
                stack.append((ci, piece, tm, tb, depth + 1))
                continue
        i0 = int(np.floor((bx0 - x0 - eps) / h))
        i1 = int(np.floor((bx1 - x0 + eps) / h))
        j0 = int(np.floor((by0 - y0 - eps) / h))
        j1 = int(np.floor((by1 - y0 + eps) / h))
        for i in range(max(i0, 0), min(i1, nx - 1) + 1):
            for j in range(max(j0, 0), min(j1, ny - 1) + 1):
                bins.setdefault((i, j), set()).add((ci, id(piece), piece))
    return {k: [(ci, p) for ci, _, p in sorted(v, key=lambda t: t[1])]
            for k, v in bins.items()}


def generate(region, rect, h):
    """Clip the domain against every grid box of the rectangle.

    Returns a RawCutMap of connected components per nonempty cell.
    The grid must tile the rectangle exactly.
    """
    x0, y0, x1, y1 = rect
    nx = (x1 - x0) / h
    ny = (y1 - y0) / h
    if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
        raise CutCellError("h does not divide the rectangle sides")
    nx, ny = int(round(nx)), int(round(ny))

    bins = _bin_pieces(region, rect, h, (nx, ny))
    lstates = _LineStates(region, (x0, y0), h)
    comps = {}
    for j in range(ny):
        # bulk classification along the row of cell centers
        for i in range(nx):
            idx = (i, j)
            box = (x0 + i * h, y0 + j * h, x0 + (i + 1) * h, y0 + (j + 1) * h)
            if idx in bins:
                try:
                    cells = clip_to_box(region, box, pieces=bins[idx],
                                        state_fn=lstates.state)
                except DegeneracyError as err:
                    raise DegeneracyError(f"cell {idx}: {err}") from err
                if cells:
                    comps[idx] = cells
            else:
                if lstates.state(1, y0 + (j + 0.5) * h, box[0], box[2]) == "in":
                    comps[idx] = [full_box_cell(box)]
    return RawCutMap(region, rect, h, comps)


# ---------------------------------------------------------------------------
# merging (one component per cell, volume fraction >= eps)
# ---------------------------------------------------------------------------

def _face_intervals_on_line(geom, axis, coord, tol):
    out = []
    for e in geom.edges:
        if e.kind != "face" or e.on_line is None:
            continue
        ax, c = e.on_line
        if ax != axis or abs(c - coord) > tol:
            continue
        (px, py), (qx, qy) = e.piece.start(), e.piece.end()
        lo, hi = sorted((py, qy) if axis == 0 else (px, qx))
        out.append((lo, hi))
    return out


def _adjacent(geom_a, idx_a, geom_b, idx_b, origin, h, tol):
    """Closures share a face sub-interval across the grid line between boxes."""
    ia, ja = idx_a
    ib, jb = idx_b
    if abs(ia - ib) + abs(ja - jb) != 1:
        # merged geometries can span several boxes; test every shared line
        pass
    axis = 0 if ia != ib else 1
    if axis == 0:
        coord = origin[0] + max(ia, ib) * h
    else:
        coord = origin[1] + max(ja, jb) * h
    fa = _face_intervals_on_line(geom_a, axis, coord, tol)
    fb = _face_intervals_on_line(geom_b, axis, coord, tol)
    for la, ha in fa:
        for lb, hb in fb:
            if min(ha, hb) - max(la, lb) > tol:
                return True
    return False


def merge(raw, eps):
    """CutAndMergeCells: largest component survives per cell, small pieces
    and small cells are absorbed by the neighbor closing in on a full cell."""
    h = raw.h
    x0, y0, _, _ = raw.rect
    origin = (x0, y0)
    tol = 1e-10 * h
    hh = h * h

    comps = {idx: list(cs) for idx, cs in sorted(raw.components.items())}

    def neighbor_indices(idx):
        i, j = idx
        return [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]

    # pass A: multi-component cells keep their largest component
    for idx in sorted(comps):
        cs = comps[idx]
        if len(cs) < 2:
            continue
        order = sorted(range(len(cs)), key=lambda k: (-cs[k].volume, k))
        keep = order[0]
        for k in order[1:]:
            piece = cs[k]
            best = None
            for nb in neighbor_indices(idx):
                if nb not in comps:
                    continue
                for ck, cand in enumerate(comps[nb]):
                    if nb == idx:
                        continue
                    if not _adjacent(piece, idx, cand, nb, origin, h, tol):
                        continue
                    key = (abs(cand.volume + piece.volume - hh), nb, ck)
                    if best is None or key < best[0]:
                        best = (key, nb, ck)
            if best is None:
                raise UnresolvedTopologyError(
                    f"component of cell {idx} has no adjacent neighbor "
                    f"(h too large to resolve the geometry)")
            _, nb, ck = best
            comps[nb][ck] = regularized_union(comps[nb][ck], piece, h)
        comps[idx] = [cs[keep]]

    for idx, cs in comps.items():
        if len(cs) != 1:
            raise UnresolvedTopologyError(f"cell {idx} still has {len(cs)}"
                                          " components after merging")

    cells = {}
    for idx, (geom,) in comps.items():
        regular = geom.regular
        walls = geom.wall_intervals
        cells[idx] = CutCell(
            index=idx,
            kind="regular" if regular else "irregular",
            volume=geom.volume,
            geom=None if regular else geom,
            walls=_walls_of(geom, idx, origin, h, tol),
            merged_from=frozenset([idx]))

    # pass B: absorb small cells into a neighbor
    forward = {}
    for idx in sorted(cells):
        cell = cells.get(idx)
        if cell is None or cell.volume >= eps * hh:
            continue
        geom_i = cell.geom if cell.geom is not None else None
        assert geom_i is not None  # a small cell is never a full box
        best = None
        for nb in neighbor_indices(idx):
            other = cells.get(nb)
            if other is None:
                continue
            geom_nb = other.geom if other.geom is not None else \
                full_box_cell(_box_of(nb, origin, h))
            if not _adjacent(geom_i, idx, geom_nb, nb, origin, h, tol):
                continue
            key = (abs(other.volume + cell.volume - hh), nb)
            if best is None or key < best[0]:
                best = (key, nb, geom_nb)
        if best is None:
            raise IsolatedSliverError(
                f"small cell {idx} (fraction {cell.volume / hh:.3g}) "
                f"has no adjacent neighbor")
        _, nb, geom_nb = best
        merged = regularized_union(geom_nb, geom_i, h)
        cells[nb] = CutCell(
            index=nb,
            kind="irregular",
            volume=merged.volume,
            geom=merged,
            walls=_merge_walls(cells[nb].walls, cell.walls),
            merged_from=cells[nb].merged_from | cell.merged_from | {idx})
        forward[idx] = nb
        del cells[idx]

    cset = CutCellSet(raw.region, raw.rect, h, eps, cells, forward)
    # resolve forwarding chains once
    cset.forward = {k: cset.resolve(v) for k, v in forward.items()}
    return cset


def _box_of(idx, origin, h):
    i, j = idx
    return (origin[0] + i * h, origin[1] + j * h,
            origin[0] + (i + 1) * h, origin[1] + (j + 1) * h)


def _walls_of(geom, idx, origin, h, tol):
    box = _box_of(idx, origin, h)
    return {k: v for k, v in geom.wall_intervals(box, tol).items() if v}


def _merge_walls(wa, wb):
    out = {k: list(v) for k, v in wa.items()}
    for k, v in wb.items():
        out.setdefault(k, []).extend(v)
    return {k: sorted(v) for k, v in out.items() if v}


# ---------------------------------------------------------------------------
# SFV / PLG classification and ghost positions
# ---------------------------------------------------------------------------

_SIDE_STEPS = {"xlo": (-1, 0), "xhi": (1, 0), "ylo": (0, -1), "yhi": (0, 1)}


@dataclass(frozen=True)
class GhostSite:
    """A fictitious regular cell behind an extendable face."""

    pos: tuple       # grid index of the ghost position
    host: tuple      # cell owning the extendable face
    step: tuple      # outward unit index step through the face
    side: str        # face name on the host cell
    layer: int       # 1 or 2
    curve_id: int    # boundary curve supplying the face datum


def extendable_ghosts(cset):
    """Ghost positions reachable through extendable faces.

    A face is extendable when it lies entirely on the domain boundary and
    the four cells behind it are regular.  Conflicting claims (one position
    reachable from two different faces) disqualify the position.
    """
    h = cset.h
    tol = 1e-8 * h
    claims = {}
    for idx, cell in cset.cells.items():
        if cell.kind != "regular" or not cell.walls:
            continue
        for side, ivals in cell.walls.items():
            if not ivals:
                continue
            covered = sum(hi - lo for lo, hi, _ in ivals)
            if covered < h - tol:
                continue
            curve_id = ivals[0][2]
            di, dj = _SIDE_STEPS[side]
            behind = [(idx[0] - k * di, idx[1] - k * dj) for k in range(1, 4)]
            if not all(cset.is_regular(b) for b in behind):
                continue
            for layer in (1, 2):
                pos = (idx[0] + layer * di, idx[1] + layer * dj)
                if pos in cset.cells:
                    claims.setdefault(pos, []).append(None)  # collision
                    continue
                site = GhostSite(pos, idx, (di, dj), side, layer, curve_id)
                claims.setdefault(pos, []).append(site)
    ghosts = {}
    for pos, sites in claims.items():
        good = [s for s in sites if s is not None]
        if len(good) == 1 and len(sites) == 1:
            ghosts[pos] = good[0]
    return ghosts


def stencil_offsets(b):
    """Index offsets of the symmetric stencil (cross for b=0, box else)."""
    if b == 0:
        out = [(0, 0)]
        for m in (1, 2):
            out += [(m, 0), (-m, 0), (0, m), (0, -m)]
        return out
    return [(m1, m2) for m1 in range(-2, 3) for m2 in range(-2, 3)]


def classify_sfv(cset, b, ghosts=None):
    """Label every cut cell SFV or PLG for the cross coefficient b."""
    if ghosts is None:
        ghosts = extendable_ghosts(cset)
    offsets = stencil_offsets(b)
    out = {}
    for idx, cell in cset.cells.items():
        ok = cell.kind == "regular"
        if ok:
            for di, dj in offsets:
                pos = (idx[0] + di, idx[1] + dj)
                if cset.is_regular(pos) or pos in ghosts:
                    continue
                ok = False
                break
        out[idx] = "sfv" if ok else "plg"
    return out


def neighbors(cset, idx):
    """Existing cut cells at L1 distance one."""
    i, j = idx
    out = []
    for nb in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]:
        cell = cset.cells.get(nb)
        if cell is not None:
            out.append(cell)
    return out


def cells_adjacent(cset, a, b):
    """True when the closures of cut cells a and b share a face interval.

    Distinguishes genuine neighbors from cells separated by a thin slit of
    the domain complement (both exist at L1 distance one but do not touch).
    Results are cached on the cut-cell set.
    """
    if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
        return False
    key = (a, b) if a <= b else (b, a)
    cache = getattr(cset, "_adjacency_cache", None)
    if cache is None:
        cache = {}
        cset._adjacency_cache = cache
    if key not in cache:
        ca = cset.cells.get(a)
        cb = cset.cells.get(b)
        if ca is None or cb is None:
            cache[key] = False
        elif ca.kind == "regular" and cb.kind == "regular":
            cache[key] = True
        else:
            ga = cset.geometry(a)
            gb = cset.geometry(b)
            cache[key] = _adjacent(ga, a, gb, b, cset.origin, cset.h,
                                   1e-10 * cset.h)
    return cache[key]


def dump_mesh(cset, stream):
    stream.write("i,j,kind,volume_fraction,n_boundary_pieces\n")
    hh = cset.h * cset.h
    for idx in sorted(cset.cells):
        cell = cset.cells[idx]
        n_bnd = 0 if cell.geom is None else len(cell.geom.boundary_pieces())
        stream.write(f"{idx[0]},{idx[1]},{cell.kind},"
                     f"{cell.volume / hh:.12g},{n_bnd}\n")
