import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhca.errors import DimensionError
from nhca.geometry import (
    bucket_classify,
    between_box,
    enclosing_box,
    fm_membership,
    pair_geometry,
)
from nhca.grid import Box, CubeId, GridRef

STD1 = GridRef.standard(1)
STD2 = GridRef.standard(2)


def sq(level, i, j):
    return CubeId(STD2, level, (i, j))


def test_identity_pair():
    g = pair_geometry(sq(0, 0, 0), sq(0, 0, 0))
    assert g.ec == 1.0 and g.rdist == 1.0 and g.between_side == 0.0


def test_separated_unit_squares():
    g = pair_geometry(sq(0, 0, 0), sq(0, 2, 2))
    assert g.ec == 1.0
    assert math.isclose(g.rdist, 1 + math.sqrt(2), rel_tol=1e-14)
    assert math.isclose(g.enclosing.side, 3.0)
    assert math.isclose(g.between_side, math.sqrt(2), rel_tol=1e-14)


def test_inner_relative_distance_example():
    I = Box((0.0, 0.0), (4.0, 4.0))
    J = Box((2.25, 2.25), (2.5, 2.5))
    g = pair_geometry(I, J)
    assert math.isclose(g.inrdist, 2.0, rel_tol=1e-14)
    assert math.isclose(g.inner_boundary_dist, 0.25, rel_tol=1e-14)


def test_enclosing_contains_both_and_minimal():
    a, b = sq(1, 0, 0).box, sq(0, 2, 1).box
    e = enclosing_box(a, b)
    assert np.all(e.lo_arr <= np.minimum(a.lo_arr, b.lo_arr))
    assert np.all(e.hi_arr >= np.maximum(a.hi_arr, b.hi_arr))
    assert e.side >= max(a.side, b.side)


def test_between_degenerate_on_touching():
    g = pair_geometry(sq(0, 0, 0), sq(0, 1, 0))
    assert g.between_side == 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        pair_geometry(CubeId(STD1, 0, (0,)), sq(0, 0, 0))


def test_bucket_level_difference():
    e, m, k = bucket_classify(sq(0, 0, 0), sq(1, 0, 0))
    assert e == 1


def test_bucket_distant_pair():
    e, m, k = bucket_classify(sq(0, 0, 0), sq(0, 8, 8))
    assert e == 0
    # parents [0,2)^2 and [8,10)^2: rdist = 1 + 6*sqrt(2)/2
    assert m == int(1 + 3 * math.sqrt(2))
    assert m == 5 and k is None


def test_bucket_touching_parents():
    e, m, k = bucket_classify(sq(0, 0, 0), sq(0, 2, 2))
    assert (e, m, k) == (0, 1, 1)


def test_bucket_partition_unique():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = sq(int(rng.integers(0, 4)), int(rng.integers(-8, 8)), int(rng.integers(-8, 8)))
        b = sq(int(rng.integers(0, 4)), int(rng.integers(-8, 8)), int(rng.integers(-8, 8)))
        e, m, k = bucket_classify(a, b)
        assert m >= 1
        assert (k is None) == (m > 1)
        if k is not None:
            assert k >= 1


def test_fm_first_clause():
    M = 3
    big = CubeId(STD2, -(M + 1), (0, 0))
    ok, clauses = fm_membership(big, big, M)
    assert ok and clauses[0]


def test_fm_unit_cubes_at_origin():
    ok, _ = fm_membership(sq(0, 0, 0), sq(0, 0, 0), 4)
    assert not ok


def test_fm_far_pair_third_clause():
    a = sq(0, 2**10, 0)
    b = sq(0, 2**10 + 2, 0)
    ok, clauses = fm_membership(a, b, 4)
    assert ok and clauses[2] and not clauses[0] and not clauses[1]


def test_ec_multiplicative_in_levels():
    a, b, c = sq(0, 0, 0), sq(2, 0, 0), sq(5, 0, 0)
    gab = pair_geometry(a, b).ec
    gbc = pair_geometry(b, c).ec
    gac = pair_geometry(a, c).ec
    assert math.isclose(gab * gbc, gac, rel_tol=1e-14)


@settings(max_examples=150)
@given(
    la=st.integers(0, 5), lb=st.integers(0, 5),
    ia=st.integers(-16, 16), ja=st.integers(-16, 16),
    ib=st.integers(-16, 16), jb=st.integers(-16, 16),
)
def test_parent_rdist_comparable(la, lb, ia, ja, ib, jb):
    a, b = sq(la, ia, ja), sq(lb, ib, jb)
    r = pair_geometry(a, b).rdist
    rp = pair_geometry(a.parent().box, b.parent().box).rdist
    assert r / 3 <= rp <= r + 1


@settings(max_examples=150)
@given(
    n=st.integers(1, 3),
    la=st.integers(0, 4), lb=st.integers(0, 4),
    data=st.data(),
)
def test_enclosing_side_comparable(n, la, lb, data):
    ca = tuple(data.draw(st.integers(-10, 10)) for _ in range(n))
    cb = tuple(data.draw(st.integers(-10, 10)) for _ in range(n))
    g = pair_geometry(CubeId(GridRef.standard(n), la, ca), CubeId(GridRef.standard(n), lb, cb))
    larger = max(2.0**-la, 2.0**-lb)
    ratio = g.enclosing.side / (g.between_side + larger)
    assert 0.5 <= ratio <= 3.0


def test_symmetry():
    a, b = sq(1, 0, 0), sq(3, 5, 7)
    gab, gba = pair_geometry(a, b), pair_geometry(b, a)
    assert gab.ec == gba.ec and gab.rdist == gba.rdist


def test_pair_geometry_json():
    d = pair_geometry(sq(0, 0, 0), sq(0, 2, 2)).to_json()
    assert set(d) == {
        "ec", "rdist", "inrdist", "enclosing_side", "between_side", "inner_boundary_dist",
    }
