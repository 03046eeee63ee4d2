import math

import numpy as np
import pytest

from cutfv.domains import (
    FOUR_DISKS,
    flower_radius,
    flower_region,
    four_disks_region,
    rotated_square_region,
    unit_square_region,
)


def test_unit_square():
    region = unit_square_region()
    assert region.areas == [pytest.approx(1.0)]


def test_rotated_square_preserves_area_and_corner():
    region = rotated_square_region()
    assert region.areas[0] == pytest.approx(1.0, rel=1e-14)
    xs = [p.start() for p in region.curves[0].pieces]
    assert any(abs(x) < 1e-15 and abs(y) < 1e-15 for x, y in xs)


def test_flower_fit_deviation():
    region = flower_region()
    t = np.linspace(0.0, 1.0, 33)
    dev = 0.0
    for piece in region.curves[1].pieces:
        x, y = piece.point(t)
        r = np.hypot(x, y)
        th = np.arctan2(y, x)
        dev = max(dev, float(np.max(np.abs(r - flower_radius(th)))))
    assert dev <= 1e-10


def test_flower_hole_area():
    region = flower_region()
    exact = 0.5 * (2.0 * math.pi * 0.25 ** 2 + math.pi * 0.05 ** 2)
    assert region.areas[1] == pytest.approx(-exact, abs=1e-10)
    assert region.areas[0] == pytest.approx(1.0)


def test_flower_membership():
    region = flower_region()
    assert region.contains((0.4, 0.4))
    assert not region.contains((0.0, 0.0))      # inside the flower hole
    assert not region.contains((0.29, 0.0))     # inside the petal at theta=0
    assert region.contains((0.0, 0.21))         # above the notch at theta=pi/2


def test_four_disks_fit_deviation():
    region = four_disks_region()
    t = np.linspace(0.0, 1.0, 33)
    dev = 0.0
    for piece in region.curves[1].pieces:
        x, y = piece.point(t)
        d = np.min(np.abs(np.array(
            [np.hypot(x - c[0], y - c[1]) - r for c, r in FOUR_DISKS])), axis=0)
        dev = max(dev, float(np.max(np.abs(d))))
    assert dev <= 1e-10


def test_four_disks_kink_count():
    region = four_disks_region()
    pieces = region.curves[1].pieces
    kinks = 0
    for a, b in zip(pieces, pieces[1:] + pieces[:1]):
        ta = a.direction(1.0, at_end=True)
        tb = b.direction(0.0)
        angle = abs(math.atan2(ta[0] * tb[1] - ta[1] * tb[0],
                               ta[0] * tb[0] + ta[1] * tb[1]))
        if angle > 0.05:
            kinks += 1
    assert kinks == 6


def test_four_disks_hole_area_oracle():
    # union area by inclusion-exclusion: big disk + 3 lens-corrected small disks
    (c0, r0) = FOUR_DISKS[0]
    total = math.pi * r0 ** 2
    for ck, rk in FOUR_DISKS[1:]:
        d = math.hypot(ck[0] - c0[0], ck[1] - c0[1])
        # lens area of two overlapping circles
        a0 = math.acos((d * d + r0 * r0 - rk * rk) / (2 * d * r0))
        ak = math.acos((d * d + rk * rk - r0 * r0) / (2 * d * rk))
        lens = (r0 * r0 * (a0 - math.sin(2 * a0) / 2)
                + rk * rk * (ak - math.sin(2 * ak) / 2))
        total += math.pi * rk ** 2 - lens
    region = four_disks_region()
    assert region.areas[1] == pytest.approx(-total, abs=1e-9)


def test_four_disks_membership():
    region = four_disks_region()
    assert not region.contains((0.5, 0.5))
    assert not region.contains((0.5, 0.73))
    assert region.contains((0.1, 0.1))
    assert region.contains((0.5, 0.95))
