import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from l1rom import hdm, rom
from l1rom.errors import DimensionMismatch, RankDeficient
from l1rom.minimize import (
    Functional,
    NonlinearResidual,
    add_regularization,
    certified_vertex,
    gauss_newton_l2,
    huber,
    huber_irls,
    huber_threshold,
    l1_gn_irls,
    l1_gn_lp,
    l1_irls,
    l1_line_search,
    l1_lp,
    minimize_linear,
    qr_least_squares,
)


def gauss_elimination(M, v):
    """Plain partial-pivoting elimination, independent of LAPACK's QR."""
    M = np.array(M, dtype=float)
    v = np.array(v, dtype=float)
    n = len(v)
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        M[[k, p]], v[[k, p]] = M[[p, k]], v[[p, k]]
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            M[i, k:] -= f * M[k, k:]
            v[i] -= f * v[k]
    x = np.zeros(n)
    for k in reversed(range(n)):
        x[k] = (v[k] - M[k, k + 1:] @ x[k + 1:]) / M[k, k]
    return x


def linprog_l1(A, b):
    """Optimal ``||A z + b||_1`` from HiGHS, as an external oracle."""
    N, r = A.shape
    c = np.concatenate([np.zeros(r), np.ones(N)])
    # |A z + b| <= e  as two inequality blocks
    G = np.block([[A, -np.eye(N)], [-A, -np.eye(N)]])
    h = np.concatenate([-b, b])
    res = linprog(c, A_ub=G, b_ub=h, bounds=[(None, None)] * r + [(0, None)] * N,
                  method="highs")
    assert res.status == 0
    return res.fun


def instance(seed, N, r):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((N, r)), rng.standard_normal(N)


# ---------------------------------------------------------------------------
# least squares


def test_qr_identity():
    rep = qr_least_squares(np.eye(2), [1.0, 2.0])
    np.testing.assert_allclose(rep.solution, [-1.0, -2.0])
    assert rep.objective == 0.0


def test_qr_mean():
    rep = qr_least_squares(np.ones((2, 1)), [-1.0, -3.0])
    assert rep.solution[0] == pytest.approx(2.0)


def test_qr_matches_normal_equations():
    A, b = instance(7, 10, 3)
    z = qr_least_squares(A, b).solution
    ref = gauss_elimination(A.T @ A, -A.T @ b)
    assert np.linalg.norm(z - ref) / np.linalg.norm(ref) < 1e-9


@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 5))
def test_l2_optimality_certificate(seed, N, r):
    A, b = instance(seed, max(N, r + 1), r)
    z = qr_least_squares(A, b).solution
    assert np.abs(A.T @ (A @ z + b)).max() < 1e-8 * np.abs(A).max() * np.linalg.norm(b)


def test_qr_rank_deficient():
    A = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(RankDeficient):
        qr_least_squares(A, np.ones(5))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        qr_least_squares(np.ones((3, 2)), np.ones(4))
    with pytest.raises(DimensionMismatch):
        l1_lp(np.ones((2, 3)), np.ones(2))


# ---------------------------------------------------------------------------
# regularization


def test_regularization_zero_is_identity():
    A, b = instance(1, 6, 2)
    A2, b2 = add_regularization(A, b, 0.0)
    np.testing.assert_array_equal(A2, A)
    np.testing.assert_array_equal(b2, b)


def test_regularization_half():
    A2, b2 = add_regularization(np.eye(1), [-1.0], 1.0)
    assert qr_least_squares(A2, b2).solution[0] == pytest.approx(0.5)


@pytest.mark.parametrize("q", [1, 2])
def test_regularization_dominates(q):
    A, b = instance(2, 20, 3)
    name = "l2" if q == 2 else "l1lp"
    z0 = minimize_linear(A, b, Functional.from_name(name)).solution
    z = minimize_linear(A, b, Functional.from_name(name, eta=1e3)).solution
    assert np.linalg.norm(z) < 1e-2 * np.linalg.norm(z0)


def test_regularization_l1_stack_is_exact():
    A, b = instance(3, 8, 2)
    A2, b2 = add_regularization(A, b, 0.3, q=1)
    z = np.array([0.7, -1.1])
    assert np.abs(A2 @ z + b2).sum() == pytest.approx(
        np.abs(A @ z + b).sum() + 0.3 * np.abs(z).sum())


# ---------------------------------------------------------------------------
# L1


def test_lp_median():
    rep = l1_lp(np.ones((3, 1)), -np.array([1.0, 2.0, 10.0]))
    assert rep.solution[0] == pytest.approx(2.0)
    assert rep.objective == pytest.approx(9.0)


def test_lp_interpolation():
    rep = l1_lp(np.eye(2), [3.0, -4.0])
    np.testing.assert_allclose(rep.solution, [-3.0, 4.0])
    assert rep.objective == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed,N,r", [(11, 20, 3), (12, 50, 5)])
def test_lp_irls_agree(seed, N, r):
    A, b = instance(seed, N, r)
    lp = l1_lp(A, b)
    irls = l1_irls(A, b)
    assert abs(irls.objective - lp.objective) / lp.objective < 1e-6
    assert lp.objective == pytest.approx(linprog_l1(A, b), rel=1e-9)


def test_lp_objective_is_residual_norm():
    A, b = instance(13, 30, 4)
    rep = l1_lp(A, b)
    assert rep.objective == pytest.approx(np.abs(A @ rep.solution + b).sum(), abs=1e-9)


@given(st.integers(0, 10_000), st.integers(4, 40), st.integers(1, 4))
def test_lp_subgradient_certificate(seed, N, r):
    A, b = instance(seed, N, r)
    rep = l1_lp(A, b)
    g = rep.dual
    res = A @ rep.solution + b
    assert np.abs(g).max() <= 1 + 1e-9
    assert np.abs(A.T @ g).max() < 1e-6
    off = np.abs(res) > 1e-8 * (1 + np.abs(b).max())
    np.testing.assert_allclose(g[off], np.sign(res[off]), atol=1e-9)


@pytest.mark.parametrize("n", [1, 3, 5, 7, 9, 11])
def test_median_property_exhaustive(n):
    # the first 200 orderings of a value set with ties and without
    values = np.array([0.0, 1.0, 1.0, 2.5, -3.0, 7.0, 4.0, 4.0, -1.0, 9.0, 5.5])[:n]
    med = np.sort(values)[n // 2]
    for perm in itertools.islice(itertools.permutations(range(n)), 200):
        b = -values[list(perm)]
        assert l1_lp(np.ones((n, 1)), b).solution[0] == pytest.approx(med)
        assert l1_irls(np.ones((n, 1)), b).solution[0] == pytest.approx(med, abs=1e-6)


def test_irls_median():
    rep = l1_irls(np.ones((3, 1)), -np.array([1.0, 2.0, 10.0]))
    assert rep.solution[0] == pytest.approx(2.0, abs=1e-6)


def test_irls_zero_residual_fixed_point():
    A, _ = instance(4, 12, 3)
    z_star = np.array([1.0, -2.0, 0.5])
    rep = l1_irls(A, -A @ z_star)
    np.testing.assert_allclose(rep.solution, z_star, atol=1e-8)
    assert rep.objective < 1e-10


@given(st.integers(0, 10_000))
def test_irls_monotone_descent(seed):
    A, b = instance(seed, 25, 3)
    hist = np.array(l1_irls(A, b, polish=False).residual_norm_history)
    assert np.all(np.diff(hist) <= 1e-12 * (1 + hist[:-1]))


def test_certified_vertex_rejects_wrong_guess():
    b = -np.array([1.0, 2.0, 10.0])
    assert certified_vertex(np.ones((3, 1)), b, [2]) is None
    z, g = certified_vertex(np.ones((3, 1)), b, [1])
    assert z[0] == pytest.approx(2.0)
    assert abs(g.sum()) < 1e-12


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_line_search_is_exact(seed, n):
    rng = np.random.default_rng(seed)
    r, d = rng.standard_normal(n), rng.standard_normal(n)
    t = l1_line_search(r, d)
    grid = np.linspace(0, 3 * max(t, 1.0), 3001)
    best = min(np.abs(r + s * d).sum() for s in grid)
    assert t >= 0
    assert np.abs(r + t * d).sum() <= best + 1e-12


# ---------------------------------------------------------------------------
# nonlinear solvers


def square_residual():
    return NonlinearResidual(
        lambda z: np.array([z[0] ** 2 - 1.0, z[1]]),
        lambda z: np.array([[2.0 * z[0], 0.0], [0.0, 1.0]]), 2, 2)


def median_residual():
    c = np.array([1.0, 2.0, 10.0])
    return NonlinearResidual(lambda z: z[0] - c, lambda z: np.ones((3, 1)), 1, 3)


def test_gn_linear_one_step():
    A, b = instance(5, 15, 3)
    rep = gauss_newton_l2(NonlinearResidual.linear(A, b), np.eye(3), np.zeros(3))
    assert rep.iterations == 1
    np.testing.assert_allclose(rep.solution, qr_least_squares(A, b).solution, atol=1e-12)


def test_gn_root():
    rep = gauss_newton_l2(square_residual(), np.eye(2), np.array([2.0, 1.0]))
    np.testing.assert_allclose(np.abs(rep.solution), [1.0, 0.0], atol=1e-8)
    assert rep.objective < 1e-16


def test_gn_lp_linear_matches_lp():
    A, b = instance(6, 15, 3)
    rep = l1_gn_lp(NonlinearResidual.linear(A, b), np.eye(3), np.zeros(3))
    assert rep.iterations == 1
    assert rep.objective == pytest.approx(l1_lp(A, b).objective, rel=1e-12)


def test_gn_lp_median():
    rep = l1_gn_lp(median_residual(), np.eye(1), np.zeros(1))
    assert rep.solution[0] == pytest.approx(2.0)


def test_gn_irls_linear_matches_lp():
    A, b = instance(8, 30, 3)
    rep = l1_gn_irls(NonlinearResidual.linear(A, b), np.eye(3), np.zeros(3))
    assert abs(rep.objective - l1_lp(A, b).objective) <= 1e-6 * l1_lp(A, b).objective


def test_gn_irls_zero_residual_returns_start():
    A, _ = instance(9, 10, 2)
    z0 = np.array([0.3, -0.7])
    rep = l1_gn_irls(NonlinearResidual.linear(A, -A @ z0), np.eye(2), z0)
    np.testing.assert_array_equal(rep.solution, z0)


def test_huber_function():
    assert huber([0.5, -2.0], 1.0) == pytest.approx(0.25 + 3.0)
    assert huber_threshold(np.array([3.0, -5.0])) == pytest.approx(5e-6)
    assert huber_threshold(np.array([0.1])) == pytest.approx(1e-6)


def test_huber_quadratic_regime_is_l2():
    A, b = instance(10, 20, 3)
    b *= 0.1 / np.abs(b).max()
    res = NonlinearResidual.linear(A * 0.01, b)
    h = huber_irls(res, np.eye(3), np.zeros(3), huber_eps2=10.0)
    g = gauss_newton_l2(res, np.eye(3), np.zeros(3))
    M = huber_threshold(res.eval(h.solution), 10.0)
    assert M >= 2 * np.abs(res.eval(h.solution)).max()
    np.testing.assert_allclose(h.solution, g.solution, atol=1e-8)


def test_huber_median_limit():
    rep = huber_irls(median_residual(), np.eye(1), np.zeros(1))
    assert rep.solution[0] == pytest.approx(2.0, abs=1e-4)


def test_functional_names_roundtrip():
    for name in ("l2", "l1lp", "l1irls", "huber"):
        assert Functional.from_name(name).name == name
    with pytest.raises(ValueError):
        Functional.from_name("l3")
    with pytest.raises(ValueError):
        Functional(kind="L2", backend="LP")


# ---------------------------------------------------------------------------
# shipped residuals


SHIPPED = {
    "advect1d": lambda: hdm.advect1d_steady(0.45, n=30),
    "burgers-steady": lambda: hdm.burgers1d_steady(0.45, n=30),
    "advdiff2d": lambda: hdm.advdiff2d(np.pi / 4, nx=32),
}


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_jacobian_finite_differences(name):
    problem = SHIPPED[name]()
    res = problem.as_residual()
    rng = np.random.default_rng(0)
    cols = np.arange(res.dim_in)
    if cols.size > 60:
        cols = rng.choice(cols, 60, replace=False)
    for _ in range(3):
        u = 1.0 + 0.4 * rng.uniform(-1, 1, res.dim_in)
        J = res.jacobian(u)
        h = 1e-6
        for j in cols:
            e = np.zeros(res.dim_in)
            e[j] = h
            fd = (res.eval(u + e) - res.eval(u - e)) / (2 * h)
            col = np.asarray(J[:, [j]].todense()).ravel()
            assert np.abs(fd - col).max() <= 1e-5 * max(1.0, np.abs(col).max())


@pytest.fixture(scope="module")
def burgers_rom():
    mus = (0.3, 0.34, 0.38, 0.42, 0.46, 0.5)
    factory = lambda mu: hdm.burgers1d_steady(mu, n=250)  # noqa: E731
    problem = factory(0.45)
    D = rom.build_dictionary(factory, mus)
    return problem.as_residual(), D.matrix, D.nearest_unit(0.45)


def test_gn_monotone_on_burgers(burgers_rom):
    res, D, z0 = burgers_rom
    hist = np.array(gauss_newton_l2(res, D, z0).residual_norm_history)
    assert np.all(np.diff(hist) <= 0)


def test_l1_beats_l2_on_its_own_norm(burgers_rom):
    res, D, z0 = burgers_rom
    l1 = l1_gn_lp(res, D, z0)
    l2 = gauss_newton_l2(res, D, z0)
    assert l1.objective <= np.abs(res.eval(D @ l2.solution)).sum() + 1e-8
    r1 = res.eval(D @ l1.solution)
    assert np.sqrt(l2.objective) <= np.linalg.norm(r1) + 1e-8
