"""Pairwise cube statistics: eccentricity, relative distances, enclosing cubes.

Conventions for a pair (I, J): if side(J) <= side(I) then the "smaller" cube
is J and the "larger" is I (ties resolve to the second argument as smaller).
Set distances are Euclidean distances between closures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .grid import (
    Box,
    CubeId,
    box_set_distance,
    central_box,
    inner_skeleton_dist,
    inrdist_boxes,
    rdist_boxes,
)


def _as_box(c) -> Box:
    return c.box if isinstance(c, CubeId) else c


def order_pair(a: Box, b: Box) -> tuple:
    """(smaller, larger) with ties resolved so the second argument is smaller."""
    if b.side <= a.side:
        return b, a
    return a, b


def enclosing_box(a: Box, b: Box) -> Box:
    """<I,J>: smallest cube containing both, leftmost position per axis.

    The side is the largest union extent over the axes; among admissible
    translates the lower corner is pushed left independently per axis, which
    realizes the minimal sum of center coordinates deterministically.
    """
    lo = np.minimum(a.lo_arr, b.lo_arr)
    hi = np.maximum(a.hi_arr, b.hi_arr)
    side = float((hi - lo).max())
    lo_pos = hi - side
    return Box(tuple(lo_pos), tuple(lo_pos + side))


def between_box(a: Box, b: Box) -> Box:
    """[I,J]: a cube of side dist(I,J) anchored at the closest-point pair.

    Only its side length is consumed downstream; with touching cubes it
    degenerates to side 0.
    """
    pa, pb = [], []
    for d in range(a.n):
        if a.hi_arr[d] < b.lo_arr[d]:
            pa.append(a.hi_arr[d])
            pb.append(b.lo_arr[d])
        elif b.hi_arr[d] < a.lo_arr[d]:
            pa.append(a.lo_arr[d])
            pb.append(b.hi_arr[d])
        else:
            p = max(a.lo_arr[d], b.lo_arr[d])
            pa.append(p)
            pb.append(p)
    side = box_set_distance(a, b)
    lo = np.minimum(pa, pb)
    return Box(tuple(lo), tuple(lo + side))


@dataclass
class PairGeometry:
    ec: float
    rdist: float
    inrdist: float
    smaller: object
    larger: object
    enclosing: Box
    between_side: float
    inner_boundary_dist: float

    def to_json(self) -> dict:
        return {
            "ec": self.ec,
            "rdist": self.rdist,
            "inrdist": self.inrdist,
            "enclosing_side": self.enclosing.side,
            "between_side": self.between_side,
            "inner_boundary_dist": self.inner_boundary_dist,
        }


def pair_geometry(I, J) -> PairGeometry:
    """All pair statistics of two full-dimensional cubes (grids may differ)."""
    a, b = _as_box(I), _as_box(J)
    if a.n != b.n:
        raise DimensionError(f"ambient dimensions differ: {a.n} vs {b.n}")
    small_box, large_box = order_pair(a, b)
    small, large = (J, I) if small_box is b else (I, J)
    d_inner = inner_skeleton_dist(small_box, large_box)
    return PairGeometry(
        ec=small_box.side / large_box.side,
        rdist=1.0 + box_set_distance(a, b) / large_box.side,
        inrdist=1.0 + d_inner / small_box.side,
        smaller=small,
        larger=large,
        enclosing=enclosing_box(a, b),
        between_side=box_set_distance(a, b),
        inner_boundary_dist=d_inner,
    )


def bucket_classify(I: CubeId, J: CubeId) -> tuple:
    """(e, m[, k]) with side(I) = 2^e side(J), m = floor rdist of the parents,
    and, when m = 1, k = floor inrdist of the parents."""
    e = J.level - I.level
    ip, jp = I.parent().box, J.parent().box
    m = int(math.floor(rdist_boxes(ip, jp)))
    if m > 1:
        return e, m, None
    k = int(math.floor(inrdist_boxes(ip, jp)))
    return e, m, k


def fm_membership(I, J, M: int) -> tuple:
    """Membership in the negligible-pair family F_M.

    A pair belongs when side(smaller) > 2^M, or side(larger) < 2^-M, or
    rdist(<I,J>, B) > M^(1/8).  Returns (bool, clauses) with the per-clause
    truth values.
    """
    a, b = _as_box(I), _as_box(J)
    small, large = order_pair(a, b)
    c1 = small.side > 2.0**M
    c2 = large.side < 2.0**-M
    c3 = rdist_boxes(enclosing_box(a, b), central_box(0, a.n)) > M ** (1.0 / 8.0)
    return (c1 or c2 or c3), (c1, c2, c3)


# ---------------------------------------------------------------------------
# vectorized pair statistics (used by scan-scale diagnostics)
# ---------------------------------------------------------------------------

def pairwise_gap(lo_a, hi_a, lo_b, hi_b):
    """Per-axis closure gaps for broadcastable box arrays (..., n)."""
    return np.maximum(0.0, np.maximum(lo_b - hi_a, lo_a - hi_b))


def pairwise_dist(lo_a, hi_a, lo_b, hi_b):
    g = pairwise_gap(lo_a, hi_a, lo_b, hi_b)
    return np.sqrt(np.sum(g * g, axis=-1))


def pairwise_skeleton_dist(lo_b, hi_b, lo_c, hi_c):
    """Distance from boxes B to the child skeleton of cubes C (broadcast)."""
    g = pairwise_gap(lo_b, hi_b, lo_c, hi_c)
    g2 = np.sum(g * g, axis=-1)
    best = None
    n = lo_c.shape[-1]
    for a in range(n):
        rest2 = g2 - g[..., a] ** 2
        for w0, w1 in ((1.0, 0.0), (0.5, 0.5), (0.0, 1.0)):
            v = w0 * lo_c[..., a] + w1 * hi_c[..., a]
            da = np.maximum(0.0, np.maximum(lo_b[..., a] - v, v - hi_b[..., a]))
            cand = np.sqrt(da * da + rest2)
            best = cand if best is None else np.minimum(best, cand)
    return best
