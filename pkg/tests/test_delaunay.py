import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccr.delaunay import (
    AdjacencyGraph,
    delaunay_adjacency,
    delaunay_triangles,
    incircle,
    orient2d,
)
from ccr.errors import DataError


def brute_force_delaunay(points):
    """O(n^4) oracle: a ccw triple is Delaunay iff no other point lies strictly
    inside its (symbolically perturbed) circumcircle. Vectorized float pass
    with exact re-evaluation of borderline determinants."""
    n = len(points)
    P = np.asarray(points, dtype=np.float64)
    triples = []
    for i, j, k in itertools.combinations(range(n), 3):
        s = orient2d(points[i], points[j], points[k])
        if s == 0:
            continue
        triples.append((i, j, k) if s > 0 else (i, k, j))
    if not triples:
        return set(), set()
    T = np.asarray(triples)
    A, B, C = P[T[:, 0]], P[T[:, 1]], P[T[:, 2]]
    D = P[None, :, :]  # (1, n, 2)
    adx, ady = A[:, None, 0] - D[..., 0], A[:, None, 1] - D[..., 1]
    bdx, bdy = B[:, None, 0] - D[..., 0], B[:, None, 1] - D[..., 1]
    cdx, cdy = C[:, None, 0] - D[..., 0], C[:, None, 1] - D[..., 1]
    t1 = (adx * adx + ady * ady) * (bdx * cdy - bdy * cdx)
    t2 = (bdx * bdx + bdy * bdy) * (adx * cdy - ady * cdx)
    t3 = (cdx * cdx + cdy * cdy) * (adx * bdy - ady * bdx)
    det = t1 - t2 + t3
    mag = np.abs(t1) + np.abs(t2) + np.abs(t3)
    self_mask = (
        (np.arange(n)[None, :] == T[:, 0:1])
        | (np.arange(n)[None, :] == T[:, 1:2])
        | (np.arange(n)[None, :] == T[:, 2:3])
    )
    inside = (det > 1e-9 * mag) & ~self_mask
    borderline = (np.abs(det) <= 1e-9 * mag) & ~self_mask
    bad = inside.any(axis=1)
    for t_idx, d_idx in zip(*np.nonzero(borderline)):
        if bad[t_idx]:
            continue
        ia, ib, ic = (int(v) for v in T[t_idx])
        if incircle(points, ia, ib, ic, int(d_idx)) > 0:
            bad[t_idx] = True
    tris = set()
    edges = set()
    for t_idx in np.nonzero(~bad)[0]:
        i, j, k = (int(v) for v in T[t_idx])
        tris.add(tuple(sorted((i, j, k))))
        edges.update(
            (tuple(sorted((i, j))), tuple(sorted((j, k))), tuple(sorted((k, i))))
        )
    return tris, edges


def test_three_points_single_triangle():
    g = delaunay_adjacency([(0.0, 0.0), (1.0, 0.0), (0.3, 0.9)])
    assert g.sorted_edges() == [(0, 1), (0, 2), (1, 2)]


def test_two_points_one_edge():
    g = delaunay_adjacency([(0.0, 0.0), (5.0, 1.0)])
    assert g.sorted_edges() == [(0, 1)]


def test_one_and_zero_points():
    assert delaunay_adjacency([(1.0, 1.0)]).sorted_edges() == []
    assert delaunay_adjacency([]).sorted_edges() == []


def test_collinear_is_path_graph():
    # unsorted input order; path must follow sorted coordinate order
    g = delaunay_adjacency([(4.0, 2.0), (0.0, 0.0), (2.0, 1.0), (6.0, 3.0)])
    assert g.sorted_edges() == [(0, 2), (0, 3), (1, 2)]


def test_duplicates_rejected():
    with pytest.raises(DataError, match="duplicate"):
        delaunay_adjacency([(0.0, 0.0), (1.0, 1.0), (0.0, 0.0)])


def test_cocircular_square_diagonal_to_smallest_index():
    # all four points on one circle: the chosen diagonal touches point 0
    g = delaunay_adjacency([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    assert (0, 2) in g.edges
    assert (1, 3) not in g.edges


def test_cocircular_rule_follows_input_index_not_geometry():
    # same square with a different input order: the diagonal moves with index 0
    g = delaunay_adjacency([(1.0, 0.0), (0.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    assert (0, 3) in g.edges
    assert (1, 2) not in g.edges


def test_matches_brute_force_oracle_random(rng):
    for _ in range(30):
        n = int(rng.integers(3, 26))
        pts = [tuple(p) for p in rng.random((n, 2)) * 100.0]
        tris, edges = brute_force_delaunay(pts)
        got = delaunay_triangles(pts)
        assert {tuple(sorted(t)) for t in got} == tris
        g = delaunay_adjacency(pts)
        assert set(g.sorted_edges()) == edges


def test_matches_oracle_on_grid():
    # regular grids are maximally cocircular; the tie rule must agree
    pts = [(float(i), float(j)) for j in range(5) for i in range(5)]
    tris, edges = brute_force_delaunay(pts)
    g = delaunay_adjacency(pts)
    assert set(g.sorted_edges()) == edges


def test_matches_oracle_low_precision_coords(rng):
    # coarse coordinates produce many collinear/cocircular degeneracies
    for _ in range(20):
        n = int(rng.integers(4, 15))
        seen = set()
        pts = []
        while len(pts) < n:
            p = (float(rng.integers(0, 6)), float(rng.integers(0, 6)))
            if p not in seen:
                seen.add(p)
                pts.append(p)
        order = sorted(range(n), key=lambda i: pts[i])
        if all(
            orient2d(pts[order[0]], pts[order[1]], pts[order[k]]) == 0
            for k in range(2, n)
        ):
            continue
        tris, edges = brute_force_delaunay(pts)
        g = delaunay_adjacency(pts)
        assert set(g.sorted_edges()) == edges


@given(
    st.lists(
        st.tuples(
            st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False)
        ),
        min_size=0,
        max_size=12,
        unique=True,
    )
)
@settings(max_examples=60)
def test_adjacency_properties(pts):
    g = delaunay_adjacency(pts)
    assert g.n == len(pts)
    for a, b in g.edges:
        assert 0 <= a < b < g.n  # symmetric by representation, no self-loops
    if g.n >= 2:
        # every point participates in at least one edge
        touched = {v for e in g.edges for v in e}
        assert touched == set(range(g.n))


def test_incircle_signs():
    pts = [(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (0.5, 0.5), (10.0, 10.0)]
    assert incircle(pts, 0, 1, 2, 3) > 0  # strictly inside
    assert incircle(pts, 0, 1, 2, 4) < 0  # strictly outside
