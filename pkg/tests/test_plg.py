import math

import numpy as np
import pytest

from cutfv.cutcell import generate, merge
from cutfv.domains import unit_square_region
from cutfv.plg import (
    InsufficientNodesError,
    asymptotic_slope,
    find_lattice,
    TriangularLattice,
    conditioning_study,
    divided_difference_inverse,
    feasible_set,
    generate_lattice,
    kappa_inf,
    loglog_slope,
    newton_interpolant,
    newton_vandermonde,
    pointwise_sample_matrix,
    principal_sites,
    space_dim,
)
from cutfv.quadrature import basis_exponents, box_moments


def square_set(n_cells, h=1.0):
    region = unit_square_region()
    # a unit square scaled grid: reuse the region but scale via rect
    from cutfv.domains import square_region
    region = square_region(0.0, 0.0, n_cells * h)
    return merge(generate(region, (0, 0, n_cells * h, n_cells * h), h), 0.1)


def box_moment_fn(cset, q, n):
    """Basis cell averages for regular grids (analytic box moments)."""
    p = cset.center(q)
    exps = basis_exponents(n)

    def fn(idx):
        m = box_moments(cset.box(idx), p, cset.h, n)
        return np.array([m[e] for e in exps])

    return fn


# ---------------------------------------------------------------------------
# feasible set
# ---------------------------------------------------------------------------

def test_feasible_set_interior():
    cset = square_set(9)
    k = feasible_set(cset, (4, 4), 4)
    assert len(k) == 25
    assert k == {(4 + a, 4 + b) for a in range(-2, 3) for b in range(-2, 3)}


def test_feasible_set_wall_minimal_shift():
    # the unshifted box already holds dim(Pi_4) = 15 cells at a wall
    cset = square_set(9)
    k = feasible_set(cset, (0, 4), 4)
    assert len(k) == 15
    assert (0, 4) in k
    assert max(i for i, _ in k) == 2


def test_find_lattice_wall_spans_five_columns():
    # 3-column boxes are singular for cell averages, so the lattice search
    # shifts the box inward until it spans five distinct columns
    cset = square_set(9)
    q = (0, 4)
    lat = find_lattice(cset, q, 4, box_moment_fn(cset, q, 4))
    cols = {i for i, _ in lat.sites}
    assert len(cols) == 5
    assert q in lat.sites


def test_feasible_set_thin_channel_grows():
    from cutfv.domains import square_region
    region = square_region(0.0, 0.0, 1.0)
    # 8 x 3 channel of cells
    cset = merge(generate(square_region(0, 0, 1.0), (0, 0, 1.0, 0.375), 0.125), 0.1)
    k = feasible_set(cset, (4, 1), 4)
    assert len(k) >= space_dim(4)
    assert all(0 <= j <= 2 for _, j in k)


def test_feasible_set_insufficient():
    cset = square_set(3)
    with pytest.raises(InsufficientNodesError):
        feasible_set(cset, (1, 1), 4)


# ---------------------------------------------------------------------------
# lattice generation
# ---------------------------------------------------------------------------

def test_find_lattice_corner():
    cset = square_set(5)
    q = (0, 0)
    lat = find_lattice(cset, q, 4, box_moment_fn(cset, q, 4))
    assert q in lat.sites
    assert lat.kappa <= 1e6
    assert len(set(lat.sites)) == 15
    assert all(s in cset.cells for s in lat.sites)


def test_principal_lattice_is_poised():
    # the anchored principal lattice itself certifies as poised
    from cutfv.plg import kappa_inf, sample_matrix

    cset = square_set(5)
    q = (0, 0)
    fn = box_moment_fn(cset, q, 4)
    m = sample_matrix(sorted(principal_sites(4)), fn)
    assert np.isfinite(kappa_inf(m))
    assert kappa_inf(m) <= 1e6
    assert abs(np.linalg.det(m)) > 0


def test_generate_lattice_interior_prefers_symmetric_image():
    cset = square_set(9)
    q = (4, 4)
    k = feasible_set(cset, q, 4)
    lat = generate_lattice(k, q, 4, box_moment_fn(cset, q, 4))
    assert q in lat.sites
    assert len(set(lat.sites)) == 15


def test_generate_lattice_missing_node_uses_reflection():
    cset = square_set(9)
    q = (4, 4)
    k = feasible_set(cset, q, 4)
    # remove one interior node of the first principal image
    k2 = set(k) - {(5, 5)}
    lat = generate_lattice(k2, q, 4, box_moment_fn(cset, q, 4))
    assert (5, 5) not in lat.sites
    assert len(lat.sites) == 15 and lat.kappa <= 1e6


def test_paper_counterexample_not_poised():
    sites = [(5, 0), (-5, 0), (0, 5), (0, -5), (4, 3), (-3, 4)]
    m = pointwise_sample_matrix(sites, 2)
    assert abs(np.linalg.det(m)) < 1e-6 * np.abs(m).max() ** 6
    assert kappa_inf(m) > 1e12


def test_poisedness_certificate_independent_lu():
    import scipy.linalg

    cset = square_set(7)
    q = (3, 3)
    lat = generate_lattice(feasible_set(cset, q, 4), q, 4,
                           box_moment_fn(cset, q, 4))
    from cutfv.plg import sample_matrix
    m = sample_matrix(lat.sites, box_moment_fn(cset, q, 4))
    _, _, u = scipy.linalg.lu(m)
    assert np.abs(np.diag(u)).min() > 1e-10
    assert kappa_inf(m) <= 1e6


def test_generate_lattice_nth_variant_differs():
    cset = square_set(9)
    q = (4, 4)
    k = feasible_set(cset, q, 4)
    fn = box_moment_fn(cset, q, 4)
    lat0 = generate_lattice(k, q, 4, fn, nth=0)
    lat1 = generate_lattice(k, q, 4, fn, nth=1)
    assert lat0.sites != lat1.sites


# ---------------------------------------------------------------------------
# Newton interpolation / divided differences
# ---------------------------------------------------------------------------

def test_dd_inverse_two_nodes():
    dd = divided_difference_inverse([0.0, 1.0])
    assert dd == pytest.approx(np.array([[1.0, 0.0], [-1.0, 1.0]]))


def test_dd_inverse_three_nodes():
    dd = divided_difference_inverse([0.0, 1.0, 2.0])
    assert dd[2] == pytest.approx([0.5, -1.0, 0.5])


def test_dd_inverse_is_inverse_of_newton_vandermonde():
    rng = np.random.default_rng(0x5EED)
    for m in range(2, 9):
        nodes = np.sort(rng.uniform(-2, 2, size=m))
        while np.min(np.diff(nodes)) < 1e-3:
            nodes = np.sort(rng.uniform(-2, 2, size=m))
        v = newton_vandermonde(nodes)
        dd = divided_difference_inverse(nodes)
        assert np.max(np.abs(v @ dd - np.eye(m))) < 1e-10


def test_dd_inverse_scaling_last_row():
    nodes = np.array([0.0, 0.7, 1.3, 2.1])
    for h in (0.5, 0.125, 2.0):
        dd = divided_difference_inverse(nodes)
        dd_h = divided_difference_inverse(0.3 + h * nodes)
        n = len(nodes) - 1
        assert dd_h[n] == pytest.approx(dd[n] / h ** n, rel=1e-12)


def test_newton_interpolant_constant():
    lat = TriangularLattice((0.0, 1.0, 2.0), (0.0, 1.0, 2.0))
    p = newton_interpolant(lat, lambda x, y: 1.0)
    assert p(0.3, 0.7) == pytest.approx(1.0, abs=1e-14)


def test_newton_interpolant_1d_quadratic():
    # degenerate-in-y use: f depends only on x
    lat = TriangularLattice((0.0, 1.0, 2.0), (0.0, 1.0, 2.0))
    p = newton_interpolant(lat, lambda x, y: x * x)
    for x in (0.0, 1.0, 2.0, 0.37, -1.2):
        assert p(x, 0.0) == pytest.approx(x * x, abs=1e-12)


def test_newton_interpolant_xy():
    lat = TriangularLattice((0.0, 1.0, 2.0), (0.0, 1.0, 2.0))
    p = newton_interpolant(lat, lambda x, y: x * y)
    for x, y in lat.sites():
        assert p(x, y) == pytest.approx(x * y, abs=1e-12)
    assert p(1.5, 0.5) == pytest.approx(0.75, abs=1e-12)


def test_newton_matches_vandermonde_oracle():
    rng = np.random.default_rng(0x5EED)
    for n in (2, 3, 4):
        nodes_x = tuple(np.sort(rng.uniform(-1, 1, n + 1)))
        nodes_y = tuple(np.sort(rng.uniform(-1, 1, n + 1)))
        lat = TriangularLattice(nodes_x, nodes_y)
        coefs = rng.standard_normal(space_dim(n))
        exps = basis_exponents(n)

        def f(x, y):
            return sum(c * x ** a * y ** b for c, (a, b) in zip(coefs, exps))

        p = newton_interpolant(lat, f)
        # dense Vandermonde solve on the same sites
        sites = lat.sites()
        m = np.array([[x ** a * y ** b for a, b in exps] for x, y in sites])
        sol = np.linalg.solve(m, np.array([f(x, y) for x, y in sites]))

        pts = rng.uniform(-1, 1, size=(100, 2))
        for x, y in pts:
            dense = sum(c * x ** a * y ** b for c, (a, b) in zip(sol, exps))
            assert p(x, y) == pytest.approx(dense, rel=1e-8, abs=1e-10)


def test_newton_duplicate_nodes_rejected():
    with pytest.raises(Exception):
        divided_difference_inverse([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

def test_conditioning_1d_like_slope():
    # 1D nodes {0,1,2} scaled by h: monomial Vandermonde conditioning ~ h^-2
    hs = [2.0 ** -k for k in range(0, 7)]
    kappas = []
    for h in hs:
        nodes = h * np.array([0.0, 1.0, 2.0])
        m = np.vander(nodes, 3, increasing=True).T
        kappas.append(kappa_inf(m))
    slope = asymptotic_slope(hs, kappas)
    assert slope == pytest.approx(-2.0, abs=0.3)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_conditioning_principal_lattice_slope(n):
    hs = [2.0 ** -k for k in range(1, 8)]
    rows = conditioning_study(principal_sites(n), n, hs)
    slope = asymptotic_slope(hs, [r[1] for r in rows])
    assert slope == pytest.approx(-n, abs=0.3)
    scaled = [r[2] for r in rows]
    assert max(scaled) / min(scaled) <= 2.0
