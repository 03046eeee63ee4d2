import io
import math

import numpy as np
import pytest

from cutfv.cutcell import (
    CutCellError,
    IsolatedSliverError,
    classify_sfv,
    dump_mesh,
    extendable_ghosts,
    generate,
    merge,
    neighbors,
    stencil_offsets,
)
from cutfv.geometry import CurvePiece, DegeneracyError, JordanCurve, Region
from cutfv.domains import (
    circle_region,
    flower_region,
    four_disks_region,
    rotated_square_region,
    unit_square_region,
)


def polygon_region(pts):
    pieces = [CurvePiece.line(pts[k], pts[(k + 1) % len(pts)])
              for k in range(len(pts))]
    return Region([JordanCurve(pieces)])


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def test_generate_unit_square():
    raw = generate(unit_square_region(), (0, 0, 1, 1), 0.25)
    assert len(raw.components) == 16
    assert all(len(cs) == 1 and cs[0].regular for cs in raw.components.values())


def test_generate_disk_quarters():
    # 2x2 grid: one quarter disk per cell, all irregular, summing to pi
    region = circle_region((0.0, 0.0), 1.0)
    raw = generate(region, (-1, -1, 1, 1), 1.0)
    cset = merge(raw, 0.1)
    assert len(cset.cells) == 4
    assert all(c.kind == "irregular" for c in cset.cells.values())
    assert cset.total_volume() == pytest.approx(math.pi, rel=1e-9)
    for c in cset.cells.values():
        assert c.volume == pytest.approx(math.pi / 4, rel=1e-9)


def test_generate_disk_finer():
    region = circle_region((0.0, 0.0), 1.0)
    cset = merge(generate(region, (-1, -1, 1, 1), 0.5), 0.1)
    assert cset.total_volume() == pytest.approx(math.pi, rel=1e-9)
    assert cset.counts() == {"regular": 4, "irregular": 12}


def test_generate_rotated_square():
    region = rotated_square_region()
    raw = generate(region, (-0.5, 0.0, 0.875, 1.375), 1 / 16)
    cset = merge(raw, 0.1)
    assert cset.total_volume() == pytest.approx(1.0, rel=1e-12)
    kinds = {c.kind for c in cset.cells.values()}
    assert kinds == {"regular", "irregular"}


def test_generate_rejects_bad_h():
    with pytest.raises(CutCellError):
        generate(unit_square_region(), (0, 0, 1, 1), 0.3)


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------

def test_merge_picks_neighbor_closest_to_full_cell():
    # cell (1,1) has components of fractions 0.05 and 0.30; the small one
    # touches neighbors of fractions 0.9 (left) and 0.4 (below).  Both merge
    # candidates are enumerated: |0.9+0.05-1| < |0.4+0.05-1|, so left wins.
    u_shape = polygon_region([
        (0.1, 1.0), (1.0, 1.0), (1.0, 0.6), (2.0, 0.6), (2.0, 1.0),
        (1.25, 1.0), (1.25, 1.2), (1.0, 1.2), (1.0, 2.0), (0.1, 2.0)])
    blob = polygon_region([(1.5, 1.4), (2.0, 1.4), (2.0, 2.0), (1.5, 2.0)])
    region = Region(u_shape.curves + blob.curves)
    raw = generate(region, (0, 0, 2, 2), 1.0)
    assert len(raw.components[(1, 1)]) == 2
    cset = merge(raw, 0.2)
    assert cset.cells[(0, 1)].volume == pytest.approx(0.95, rel=1e-12)
    assert cset.cells[(1, 0)].volume == pytest.approx(0.4, rel=1e-12)
    assert cset.cells[(1, 1)].volume == pytest.approx(0.3, rel=1e-12)
    assert cset.cells[(0, 1)].kind == "irregular"


def test_merge_noop_when_all_fractions_large():
    region = polygon_region([(-3, -3), (0.6, -3), (0.6, 3), (-3, 3)])
    raw = generate(region, (-2, -2, 1, 1), 1.0)
    cset = merge(raw, 0.1)
    assert not cset.forward
    for cs in raw.components.values():
        assert len(cs) == 1
    assert all(c.volume >= 0.1 for c in cset.cells.values())


def test_merge_small_column_goes_left():
    # half plane x < (2+0.05)h: the 0.05-fraction column merges left
    h = 0.25
    region = polygon_region([(-2, -2), ((2 + 0.05) * h, -2),
                             ((2 + 0.05) * h, 2), (-2, 2)])
    raw = generate(region, (0, 0, 1, 1), h)
    cset = merge(raw, 0.1)
    hh = h * h
    for j in range(4):
        assert (2, j) not in cset.cells
        assert cset.resolve((2, j)) == (1, j)
        assert cset.cells[(1, j)].volume == pytest.approx(1.05 * hh, rel=1e-10)
    total = sum(c.volume for c in cset.cells.values())
    assert total == pytest.approx(2.05 * h * 1.0, rel=1e-12)


def test_merge_volume_conservation_and_eps_bound():
    region = flower_region()
    h = 1 / 20
    raw = generate(region, (-0.5, -0.5, 0.5, 0.5), h)
    before = sum(c.volume for cs in raw.components.values() for c in cs)
    cset = merge(raw, 0.1)
    assert cset.total_volume() == pytest.approx(before, rel=1e-12)
    assert min(c.volume for c in cset.cells.values()) >= 0.1 * h * h
    exact = 1.0 - 0.5 * (2 * math.pi * 0.25 ** 2 + math.pi * 0.05 ** 2)
    assert cset.total_volume() == pytest.approx(exact, rel=1e-10)


def test_merge_isolated_sliver_raises():
    # a lone sliver beside an empty grid: nothing to merge with
    region = polygon_region([(0.0, 0.0), (0.02, 0.0), (0.02, 1.0), (0.0, 1.0)])
    raw = generate(region, (0, 0, 1, 1), 1.0)
    with pytest.raises((IsolatedSliverError, CutCellError)):
        merge(raw, 0.1)


def test_unresolved_topology_two_islands_in_one_cell():
    # two blobs inside a single grid cell, no neighbors to merge into
    region = Region(circle_region((0.3, 0.5), 0.1).curves
                    + circle_region((0.7, 0.5), 0.1).curves)
    raw = generate(region, (0, 0, 1, 1), 1.0)
    assert len(raw.components[(0, 0)]) == 2
    with pytest.raises((CutCellError, DegeneracyError)):
        merge(raw, 0.1)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def test_classify_unit_square_b0_all_sfv():
    cset = merge(generate(unit_square_region(), (0, 0, 1, 1), 0.125), 0.1)
    cls = classify_sfv(cset, 0.0)
    assert all(v == "sfv" for v in cls.values())


def test_classify_unit_square_cross_term_corners_plg():
    cset = merge(generate(unit_square_region(), (0, 0, 1, 1), 0.125), 0.1)
    cls = classify_sfv(cset, 1.0)
    plg = {k for k, v in cls.items() if v == "plg"}
    expect = {(i, j) for i in (0, 1, 6, 7) for j in (0, 1, 6, 7)}
    assert plg == expect


def test_classify_flower_irregular_cells_are_plg():
    region = flower_region()
    cset = merge(generate(region, (-0.5, -0.5, 0.5, 0.5), 1 / 20), 0.02)
    cls = classify_sfv(cset, 0.0)
    for idx, cell in cset.cells.items():
        if cell.kind == "irregular":
            assert cls[idx] == "plg"
    # any cell whose cross stencil holds an irregular cell is PLG too
    for idx, cell in cset.cells.items():
        if cls[idx] == "sfv":
            for di, dj in stencil_offsets(0.0):
                pos = (idx[0] + di, idx[1] + dj)
                other = cset.cells.get(pos)
                assert other is None or other.kind == "regular" or \
                    pos in extendable_ghosts(cset)


@pytest.mark.parametrize("builder,rect,eps,b,hs", [
    (flower_region, (-0.5, -0.5, 0.5, 0.5), 0.02, 0.0, (1 / 20, 1 / 40)),
    (four_disks_region, (0, 0, 1, 1), 0.08, 0.0, (1 / 32, 1 / 64)),
    (rotated_square_region, (-0.5, 0.0, 0.875, 1.375), 0.1, -1.0,
     (1 / 16, 1 / 32)),
])
def test_plg_count_scales_like_boundary(builder, rect, eps, b, hs):
    region = builder()
    counts = []
    for h in hs:
        cset = merge(generate(region, rect, h), eps)
        cls = classify_sfv(cset, b)
        counts.append(sum(1 for v in cls.values() if v == "plg"))
    ratio = counts[1] / counts[0]
    assert 1.5 <= ratio <= 2.8, counts


def test_unit_square_has_no_plg_at_any_h():
    for h in (0.125, 0.0625):
        cset = merge(generate(unit_square_region(), (0, 0, 1, 1), h), 0.1)
        cls = classify_sfv(cset, 0.0)
        assert sum(1 for v in cls.values() if v == "plg") == 0


def test_extendable_ghosts_cover_walls():
    cset = merge(generate(unit_square_region(), (0, 0, 1, 1), 0.125), 0.1)
    ghosts = extendable_ghosts(cset)
    # two layers on each of four walls
    assert len(ghosts) == 4 * 8 * 2
    assert (-1, 3) in ghosts and (-2, 3) in ghosts
    g = ghosts[(-1, 3)]
    assert g.host == (0, 3) and g.step == (-1, 0) and g.layer == 1


# ---------------------------------------------------------------------------
# neighbors, dump
# ---------------------------------------------------------------------------

def test_neighbors_counts():
    cset = merge(generate(unit_square_region(), (0, 0, 1, 1), 0.25), 0.1)
    assert len(neighbors(cset, (1, 1))) == 4
    assert len(neighbors(cset, (0, 0))) == 2
    region = circle_region((0.0, 0.0), 1.0)
    cset = merge(generate(region, (-1, -1, 1, 1), 0.25), 0.1)
    # the corner-most nonempty cell touches empty cells
    idx = min(cset.cells)
    assert len(neighbors(cset, idx)) < 4


def test_dump_mesh_format():
    cset = merge(generate(unit_square_region(), (0, 0, 1, 1), 0.5), 0.1)
    buf = io.StringIO()
    dump_mesh(cset, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "i,j,kind,volume_fraction,n_boundary_pieces"
    assert len(lines) == 5
    assert lines[1].split(",")[2] == "regular"
