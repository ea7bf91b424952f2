import numpy as np
import pytest
from conftest import random_factors, random_tensor
from oracles import brute_tensor_loss, central_diff, max_rel_err

from dttf import cp
from dttf.cp import FactorSet, InitDistribution, InitSpec
from dttf.errors import IndexOutOfRange, ShapeMismatch, ZeroDimension
from dttf.tensor import Domain, SparseTensor3, build_tensor

S, T = Domain.SOURCE, Domain.TARGET


def one_row_factors(u, v, c):
    u, v, c = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (u, v, c))
    return FactorSet(u, v, u, v, c)


def test_init_deterministic():
    spec = InitSpec(seed=7)
    a = cp.init_factors((3, 4), (5, 6), 2, 3, spec)
    b = cp.init_factors((3, 4), (5, 6), 2, 3, spec)
    for (_, x), (_, y) in zip(a.named(), b.named()):
        assert x.tobytes() == y.tobytes()
    assert a.U_s.shape == (3, 3) and a.V_t.shape == (6, 3) and a.C.shape == (2, 3)


def test_init_gaussian_mean():
    f = cp.init_factors((10_000, 1), (1, 1), 1, 1, InitSpec(3, 0.1, InitDistribution.GAUSSIAN_ZERO_MEAN))
    assert abs(f.U_s.mean()) < 3 * 0.1 / np.sqrt(10_000)


def test_init_uniform_bounds():
    f = cp.init_factors((200, 5), (3, 3), 2, 4, InitSpec(1, 0.2, InitDistribution.UNIFORM_SYMMETRIC))
    assert np.all(np.abs(f.U_s) <= 0.2)


def test_init_zero_dimension():
    with pytest.raises(ZeroDimension):
        cp.init_factors((3, 4), (5, 6), 2, 0)
    with pytest.raises(ValueError):
        InitSpec(scale=0.0)


def test_factorset_shape_check():
    with pytest.raises(ShapeMismatch):
        FactorSet(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)))


@pytest.mark.parametrize("u, v, c, expected", [
    ([1, 0], [1, 1], [3, 5], 3.0),
    ([1, 2], [2, 1], [1, 1], 4.0),
    ([0.3, -2], [1.5, 7], [0, 0], 0.0),
])
def test_predict_rating(u, v, c, expected):
    assert cp.predict_rating(one_row_factors(u, v, c), T, 0, 0, 0) == expected


def test_predict_out_of_range():
    with pytest.raises(IndexOutOfRange):
        cp.predict_rating(one_row_factors([1], [1], [1]), S, 1, 0, 0)


def test_predict_trilinear(rng):
    f = random_factors(rng, (3, 4), (2, 5), 3, 4)
    before = [cp.predict_rating(f, T, 1, j, l) for j in range(5) for l in range(3)]
    f.U_t[1] *= 2.5
    after = [cp.predict_rating(f, T, 1, j, l) for j in range(5) for l in range(3)]
    np.testing.assert_allclose(after, 2.5 * np.array(before), rtol=1e-14)


def test_tensor_loss_exact_and_single():
    f = one_row_factors([1, 2], [2, 1], [1, 1])
    exact = build_tensor((1, 1, 1), [(0, 0, 0, 4.0)])
    assert cp.tensor_loss(f, exact, exact) == 0.0
    zero = one_row_factors([0.0], [0.0], [0.0])
    two = build_tensor((1, 1, 1), [(0, 0, 0, 2.0)])
    assert cp.tensor_loss(zero, two, SparseTensor3.empty((1, 1, 1))) == 4.0


def test_tensor_loss_shape_mismatch(rng):
    f = random_factors(rng, (3, 4), (2, 5), 3, 2)
    with pytest.raises(ShapeMismatch):
        cp.tensor_loss(f, random_tensor(rng, (3, 4, 2)), random_tensor(rng, (2, 5, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_tensor_loss_brute_force(seed):
    rng = np.random.default_rng(seed)
    ds, dt, L = (int(rng.integers(1, 5)), int(rng.integers(1, 5))), (4, 3), int(rng.integers(1, 5))
    f = random_factors(rng, ds, dt, L, 3)
    R_s, R_t = random_tensor(rng, (*ds, L)), random_tensor(rng, (*dt, L))
    assert abs(cp.tensor_loss(f, R_s, R_t) - brute_tensor_loss(f, R_s, R_t)) <= 1e-9


# --- gradients against finite differences of a factor-only objective ------

def factor_objective(f, R_s, R_t, H, rho, lam):
    J = 0.5 * cp.tensor_loss(f, R_s, R_t)
    for name, mat in f.named():
        if name in H:
            J += 0.5 * rho * float(np.sum((mat - H[name]) ** 2))
        J += 0.5 * lam * float(np.sum(mat ** 2))
    return J


@pytest.fixture
def problem(rng):
    f = random_factors(rng, (4, 5), (3, 4), 3, 2)
    R_s, R_t = random_tensor(rng, (4, 5, 3), 0.5), random_tensor(rng, (3, 4, 3), 0.5)
    H = {name: rng.random(m.shape) for name, m in f.named() if name != "C"}
    return f, R_s, R_t, H, 0.4, 0.05


def test_user_and_item_rows_match_finite_differences(problem):
    f, R_s, R_t, H, rho, lam = problem
    def J():
        return factor_objective(f, R_s, R_t, H, rho, lam)
    for d, R in ((S, R_s), (T, R_t)):
        U, V = f.users(d), f.items(d)
        gU = np.array([cp.grad_user_row(f, R, d, i, H["U_" + d.short][i], rho, lam)
                       for i in range(U.shape[0])])
        gV = np.array([cp.grad_item_row(f, R, d, j, H["V_" + d.short][j], rho, lam)
                       for j in range(V.shape[0])])
        assert max_rel_err(gU, central_diff(J, U)) <= 1e-5
        assert max_rel_err(gV, central_diff(J, V)) <= 1e-5


def test_view_rows_match_finite_differences(problem):
    f, R_s, R_t, H, rho, lam = problem
    gC = np.array([cp.grad_view_row(f, R_s, R_t, l, lam) for l in range(f.L)])
    numeric = central_diff(lambda: factor_objective(f, R_s, R_t, H, rho, lam), f.C)
    assert max_rel_err(gC, numeric) <= 1e-5


def test_zero_residual_gradients_vanish():
    f = one_row_factors([1, 2], [2, 1], [1, 1])
    R = build_tensor((1, 1, 1), [(0, 0, 0, 4.0)])
    np.testing.assert_array_equal(cp.grad_user_row(f, R, T, 0, f.U_t[0], 0.3, 0.0), 0.0)
    np.testing.assert_array_equal(cp.grad_item_row(f, R, T, 0, f.V_t[0], 0.3, 0.0), 0.0)
    np.testing.assert_array_equal(cp.grad_view_row(f, R, R, 0, 0.0), 0.0)


def test_unrated_rows_only_regularised(rng):
    f = random_factors(rng, (3, 3), (3, 3), 2, 2)
    R = build_tensor((3, 3, 2), [(0, 0, 0, 1.0)])
    np.testing.assert_allclose(cp.grad_user_row(f, R, S, 2, None, 0.0, 0.1), 0.1 * f.U_s[2])
    np.testing.assert_allclose(cp.grad_item_row(f, R, S, 1, rng.random(2), 0.0, 0.1),
                               0.1 * f.V_s[1])
    np.testing.assert_allclose(cp.grad_view_row(f, R, R, 1, 0.1), 0.1 * f.C[1])


def test_coupling_shape_mismatch(rng):
    f = random_factors(rng, (3, 3), (3, 3), 2, 2)
    R = build_tensor((3, 3, 2), [(0, 0, 0, 1.0)])
    with pytest.raises(ShapeMismatch):
        cp.grad_user_row(f, R, S, 0, np.ones(3), 0.1, 0.1)
    with pytest.raises(IndexOutOfRange):
        cp.grad_view_row(f, R, R, 2, 0.1)


def test_no_transfer_equals_emptied_source(problem):
    f, R_s, R_t, *_ = problem
    empty = SparseTensor3.empty(R_s.dims)
    for l in range(f.L):
        a = cp.grad_view_row(f, R_s, R_t, l, 0.05, transfer=False)
        b = cp.grad_view_row(f, empty, R_t, l, 0.05)
        np.testing.assert_array_equal(a, b)


def test_view_gradient_aggregation_is_exact(problem):
    f, R_s, R_t, *_ = problem
    for l in range(f.L):
        full = cp.grad_view_row(f, R_s, R_t, l, 0.05)
        part = cp.grad_view_row(f, R_s, R_t, l, 0.05, transfer=False)
        src = cp.view_row_contribution(f, R_s, S, l)
        np.testing.assert_array_equal(full, part + src)


def test_vectorised_residual_grads_match_rows(problem):
    f, R_s, R_t, *_ = problem
    gU, gV, gC = cp.factor_residual_grads(f, R_t, T)
    for i in range(f.U_t.shape[0]):
        np.testing.assert_allclose(gU[i], cp.grad_user_row(f, R_t, T, i), atol=1e-12)
    for j in range(f.V_t.shape[0]):
        np.testing.assert_allclose(gV[j], cp.grad_item_row(f, R_t, T, j), atol=1e-12)
    for l in range(f.L):
        np.testing.assert_allclose(gC[l], cp.view_row_contribution(f, R_t, T, l), atol=1e-12)
