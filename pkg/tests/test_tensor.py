import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dttf.errors import DuplicateConflict, EmptyInput, IndexOutOfRange, NonFiniteValue, ZeroDimension
from dttf.tensor import SparseTensor3, as_side_info, build_tensor, density, is_observed


@pytest.fixture
def single():
    return build_tensor((2, 2, 2), [(0, 0, 0, 5.0)])


def test_build_single_entry(single):
    assert single.nnz == 1
    assert density(single) == 0.125
    assert single.entries() == [(0, 0, 0, 5.0)]


def test_exact_duplicate_collapses():
    t = build_tensor((2, 2, 2), [(0, 0, 0, 5.0), (0, 0, 0, 5.0)])
    assert t.nnz == 1


def test_conflicting_duplicate():
    with pytest.raises(DuplicateConflict):
        build_tensor((2, 2, 2), [(0, 0, 0, 5.0), (0, 0, 0, 4.0)])


@pytest.mark.parametrize("triple", [(2, 0, 0, 1.0), (0, 2, 0, 1.0), (0, 0, 5, 1.0),
                                    (-1, 0, 0, 1.0), (0.5, 0, 0, 1.0)])
def test_index_out_of_range(triple):
    with pytest.raises(IndexOutOfRange):
        build_tensor((2, 2, 2), [triple])


def test_rejects_nonfinite_rating():
    with pytest.raises(NonFiniteValue):
        build_tensor((2, 2, 2), [(0, 0, 0, math.nan)])


def test_rejects_bad_dims_and_empty():
    with pytest.raises(ZeroDimension):
        build_tensor((0, 2, 2), [(0, 0, 0, 1.0)])
    with pytest.raises(EmptyInput):
        build_tensor((2, 2, 2), [])


def test_is_observed(single):
    assert is_observed(single, 0, 0, 0)
    assert not is_observed(single, 1, 1, 1)
    with pytest.raises(IndexOutOfRange):
        is_observed(single, 5, 0, 0)


def test_density_full():
    cells = [(i, j, l, 1.0) for i in range(2) for j in range(2) for l in range(2)]
    assert density(build_tensor((2, 2, 2), cells)) == 1.0


def test_density_formula_matches_reported_dataset_sparsity():
    # 181,411 ratings from 1,750 users on 3,546 hotels over 4 views
    d = 181_411 / (1_750 * 3_546 * 4)
    assert abs(d - 0.0073) < 5e-5
    assert abs((1 - d) - 0.9926) < 1e-4


def test_sorted_lexicographically():
    t = build_tensor((3, 3, 2), [(2, 0, 1, 1.0), (0, 2, 0, 2.0), (0, 1, 1, 3.0), (0, 1, 0, 4.0)])
    assert [e[:3] for e in t.entries()] == [(0, 1, 0), (0, 1, 1), (0, 2, 0), (2, 0, 1)]


def test_mode_groups():
    t = build_tensor((3, 3, 2), [(2, 0, 1, 1.0), (0, 2, 0, 2.0), (0, 1, 1, 3.0)])
    for mode in range(3):
        idx = (t.users, t.items, t.views)[mode]
        for k in range(t.dims[mode]):
            assert sorted(t.entries_of(mode, k)) == sorted(np.flatnonzero(idx == k))


def test_empty_tensor():
    t = SparseTensor3.empty((2, 3, 4))
    assert t.nnz == 0 and density(t) == 0.0
    assert not is_observed(t, 1, 2, 3)


def test_side_info_validation():
    with pytest.raises(NonFiniteValue):
        as_side_info([[1.0, math.inf]])
    assert as_side_info([[0, 1], [1, 0]], 2).shape == (2, 2)


cells = st.tuples(st.integers(0, 4), st.integers(0, 5), st.integers(0, 2))


@st.composite
def tensors(draw):
    keys = draw(st.sets(cells, min_size=1, max_size=40))
    ratings = draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=len(keys),
                            max_size=len(keys)))
    return [(*k, r) for k, r in zip(sorted(keys), ratings)]


@settings(max_examples=60, deadline=None)
@given(tensors(), st.randoms(use_true_random=False))
def test_observation_and_density_properties(triples, rnd: random.Random):
    t = build_tensor((5, 6, 3), triples)
    assert all(is_observed(t, i, j, l) for i, j, l, _ in t.entries())
    present = {e[:3] for e in t.entries()}
    absent = [(i, j, l) for i in range(5) for j in range(6) for l in range(3)
              if (i, j, l) not in present]
    for cell in rnd.sample(absent, min(100, len(absent))):
        assert not is_observed(t, *cell)
    shuffled = list(triples)
    rnd.shuffle(shuffled)
    t2 = build_tensor((5, 6, 3), shuffled)
    assert 0 < density(t) <= 1
    assert density(t2) == density(t)
    assert build_tensor(t.dims, t.entries()) == t
