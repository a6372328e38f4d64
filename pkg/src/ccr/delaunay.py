"""Delaunay adjacency over superpixel centers, with exact predicates.

Orientation and in-circle tests are evaluated with a floating-point filter
and fall back to exact rational arithmetic, so no epsilon thresholds leak
into the graph. Cocircular degeneracies are resolved deterministically by
index-ordered symbolic perturbation of the lifted coordinate: point i gets
an infinitesimal weight eps^(i+1), which always awards the ambiguous
diagonal to the smallest point index involved.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

from .errors import DataError

# Filter slack: float evaluation of these small determinants is accurate to a
# few ulps, so any |det| above 1e-9 times the magnitude of its terms has the
# correct sign. Below that we re-evaluate exactly.
_FILTER = 1e-9


def _sign(x) -> int:
    if x > 0:
        return 1
    if x < 0:
        return -1
    return 0


def orient2d(a, b, c) -> int:
    """Sign of the ccw test: +1 if a->b->c turns left, -1 right, 0 collinear."""
    t1 = (b[0] - a[0]) * (c[1] - a[1])
    t2 = (b[1] - a[1]) * (c[0] - a[0])
    det = t1 - t2
    if abs(det) > _FILTER * (abs(t1) + abs(t2)):
        return _sign(det)
    ax, ay = Fraction(a[0]), Fraction(a[1])
    bx, by = Fraction(b[0]), Fraction(b[1])
    cx, cy = Fraction(c[0]), Fraction(c[1])
    return _sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def _incircle_float(a, b, c, d):
    """Float in-circle determinant and a magnitude estimate for the filter."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    la = adx * adx + ady * ady
    lb = bdx * bdx + bdy * bdy
    lc = cdx * cdx + cdy * cdy
    t1 = la * (bdx * cdy - bdy * cdx)
    t2 = lb * (adx * cdy - ady * cdx)
    t3 = lc * (adx * bdy - ady * bdx)
    return t1 - t2 + t3, abs(t1) + abs(t2) + abs(t3)


def _incircle_exact_parts(a, b, c, d):
    """Exact determinant plus the cofactors needed for the perturbation."""
    adx, ady = Fraction(a[0]) - Fraction(d[0]), Fraction(a[1]) - Fraction(d[1])
    bdx, bdy = Fraction(b[0]) - Fraction(d[0]), Fraction(b[1]) - Fraction(d[1])
    cdx, cdy = Fraction(c[0]) - Fraction(d[0]), Fraction(c[1]) - Fraction(d[1])
    aa = bdx * cdy - bdy * cdx  # cofactor of row a
    ab = adx * cdy - ady * cdx  # cofactor of row b
    ac = adx * bdy - ady * bdx  # cofactor of row c
    det = (
        (adx * adx + ady * ady) * aa
        - (bdx * bdx + bdy * bdy) * ab
        + (cdx * cdx + cdy * cdy) * ac
    )
    return det, aa, ab, ac


def incircle(points, ia: int, ib: int, ic: int, id_: int) -> int:
    """Perturbed in-circle sign for the ccw triangle (ia, ib, ic) vs id_.

    Returns +1 when point id_ lies strictly inside the (symbolically
    perturbed) circumcircle, -1 outside, 0 only for fully collinear input.
    """
    a, b, c, d = points[ia], points[ib], points[ic], points[id_]
    det, mag = _incircle_float(a, b, c, d)
    if abs(det) > _FILTER * mag:
        return _sign(det)
    det, aa, ab, ac = _incircle_exact_parts(a, b, c, d)
    if det != 0:
        return _sign(det)
    # Lifted weights w_i = eps^(i+1):
    #   det* = det - w_a*aa + w_b*ab - w_c*ac + w_d*orient(a,b,c)
    # The smallest index dominates; take the first nonzero coefficient.
    terms = sorted(
        [(ia, -aa), (ib, ab), (ic, -ac), (id_, aa - ab + ac)],
        key=lambda t: t[0],
    )
    for _, coeff in terms:
        if coeff != 0:
            return _sign(coeff)
    return 0


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected superpixel neighborhood graph from Delaunay triangulation."""

    n: int
    edges: frozenset[tuple[int, int]]  # pairs (i, j) with i < j

    def neighbors(self, i: int) -> set[int]:
        out = set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def neighbor_map(self) -> list[set[int]]:
        out = [set() for _ in range(self.n)]
        for a, b in self.edges:
            out[a].add(b)
            out[b].add(a)
        return out

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def _scan_triangulation(points, order):
    """Lex-order incremental triangulation of the convex hull.

    Returns (triangles, consumed) where triangles are ccw index triples.
    Assumes not all points are collinear.
    """
    tris = []
    # absorb the (possibly collinear) prefix
    chain = [order[0], order[1]]
    k = 2
    while k < len(order) and orient2d(
        points[chain[0]], points[chain[1]], points[order[k]]
    ) == 0:
        chain.append(order[k])
        k += 1
    p = order[k]
    for u, v in zip(chain, chain[1:]):
        if orient2d(points[u], points[v], points[p]) > 0:
            tris.append((u, v, p))
        else:
            tris.append((v, u, p))
    # hull polygon in ccw order
    if orient2d(points[chain[0]], points[chain[1]], points[p]) > 0:
        hull = chain + [p]
    else:
        hull = list(reversed(chain)) + [p]
    for idx in order[k + 1 :]:
        q = points[idx]
        m = len(hull)
        visible = [
            orient2d(points[hull[i]], points[hull[(i + 1) % m]], q) < 0
            for i in range(m)
        ]
        for i in range(m):
            if visible[i]:
                a, b = hull[i], hull[(i + 1) % m]
                tris.append((a, idx, b))
        # replace the contiguous visible arc with the new point
        start = next(i for i in range(m) if visible[i] and not visible[i - 1])
        end = start
        while visible[end % m]:
            end += 1
        new_hull = [hull[end % m]]
        j = end % m
        while j != start:
            j = (j + 1) % m
            new_hull.append(hull[j])
        new_hull.append(idx)
        hull = new_hull
    return tris


def _flip_to_delaunay(points, tris):
    """Lawson flips under the perturbed in-circle test; terminates at the
    unique perturbed Delaunay triangulation."""
    tri_set = set()
    edge_map: dict[tuple[int, int], set[tuple[int, int, int]]] = {}

    def tri_edges(t):
        return (
            tuple(sorted((t[0], t[1]))),
            tuple(sorted((t[1], t[2]))),
            tuple(sorted((t[2], t[0]))),
        )

    def add_tri(t):
        tri_set.add(t)
        for e in tri_edges(t):
            edge_map.setdefault(e, set()).add(t)

    def remove_tri(t):
        tri_set.discard(t)
        for e in tri_edges(t):
            edge_map[e].discard(t)

    def canon(a, b, c):
        # rotate so the smallest index leads, preserving orientation
        if a <= b and a <= c:
            return (a, b, c)
        if b <= a and b <= c:
            return (b, c, a)
        return (c, a, b)

    for t in tris:
        add_tri(canon(*t))

    queue = deque(edge_map.keys())
    queued = set(queue)
    while queue:
        e = queue.popleft()
        queued.discard(e)
        ts = edge_map.get(e)
        if ts is None or len(ts) != 2:
            continue
        t1, t2 = sorted(ts)
        a, b = e
        c = next(v for v in t1 if v not in e)
        d = next(v for v in t2 if v not in e)
        # orient (a, b, c) ccw according to t1's stored orientation
        i = t1.index(c)
        aa, bb = t1[(i + 1) % 3], t1[(i + 2) % 3]
        if incircle(points, aa, bb, c, d) <= 0:
            continue
        # flip e=(aa,bb) to (c,d); quad must be strictly convex
        s1 = orient2d(points[c], points[d], points[aa])
        s2 = orient2d(points[c], points[d], points[bb])
        if s1 == 0 or s2 == 0 or s1 == s2:
            raise AssertionError("non-flippable non-Delaunay edge (degenerate input?)")
        remove_tri(t1)
        remove_tri(t2)
        # new triangles around edge (c, d): ccw orientations (aa, d, c)? derive
        # from the quad aa -> d -> bb -> c (ccw walk around the old edge)
        n1 = canon(c, aa, d)
        if orient2d(points[n1[0]], points[n1[1]], points[n1[2]]) < 0:
            n1 = (n1[0], n1[2], n1[1])
            n1 = canon(*n1)
        n2 = canon(d, bb, c)
        if orient2d(points[n2[0]], points[n2[1]], points[n2[2]]) < 0:
            n2 = (n2[0], n2[2], n2[1])
            n2 = canon(*n2)
        add_tri(n1)
        add_tri(n2)
        for t in (n1, n2):
            for e2 in tri_edges(t):
                if e2 not in queued:
                    queue.append(e2)
                    queued.add(e2)
    return tri_set


def delaunay_triangles(points) -> set[tuple[int, int, int]]:
    """Delaunay triangles (ccw, canonically rotated) of >= 3 points not all
    collinear, under the module's deterministic cocircular tie rule."""
    order = sorted(range(len(points)), key=lambda i: points[i])
    tris = _scan_triangulation(points, order)
    return _flip_to_delaunay(points, tris)


def delaunay_adjacency(points) -> AdjacencyGraph:
    """Delaunay edge set over distinct points.

    n <= 2 connects all pairs; fully collinear input degenerates to the path
    graph in sorted coordinate order. Duplicate points are rejected.
    """
    points = [(float(x), float(y)) for x, y in points]
    n = len(points)
    if len(set(points)) != n:
        raise DataError("duplicate points are not allowed")
    if n <= 1:
        return AdjacencyGraph(n, frozenset())
    if n == 2:
        return AdjacencyGraph(n, frozenset({(0, 1)}))
    order = sorted(range(n), key=lambda i: points[i])
    collinear = all(
        orient2d(points[order[0]], points[order[1]], points[order[k]]) == 0
        for k in range(2, n)
    )
    if collinear:
        edges = {
            tuple(sorted((order[i], order[i + 1]))) for i in range(n - 1)
        }
        return AdjacencyGraph(n, frozenset(edges))
    tris = delaunay_triangles(points)
    edges = set()
    for t in tris:
        edges.add(tuple(sorted((t[0], t[1]))))
        edges.add(tuple(sorted((t[1], t[2]))))
        edges.add(tuple(sorted((t[2], t[0]))))
    return AdjacencyGraph(n, frozenset(edges))
