import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from synthop import gram, splines
from synthop.errors import SplineGridTooCoarse, SplineLevelTooSmall
from synthop.signals import Dataset, Trajectory, quadrature
from synthop.splines import BSplineBasis, bspline_eval


def test_degree_zero_and_hat():
    b0 = BSplineBasis(3, 0, 1.0)
    h = b0.h
    np.testing.assert_array_equal(bspline_eval(b0, 0, [0.0, 0.5 * h, h - 1e-12, h, 2 * h]), [1, 1, 1, 0, 0])
    b1 = BSplineBasis(3, 1, 1.0)
    assert bspline_eval(b1, 0, b1.h) == pytest.approx(1.0, abs=1e-15)
    assert bspline_eval(b1, 0, 0.0) == 0.0
    assert bspline_eval(b1, 0, 2 * b1.h) == pytest.approx(0.0, abs=1e-15)


def test_eval_errors():
    b = BSplineBasis(3, 2, 1.0)
    with pytest.raises(IndexError):
        bspline_eval(b, b.count, 0.5)
    with pytest.raises(ValueError):
        bspline_eval(b, 0, 1.5)
    with pytest.raises(ValueError):
        bspline_eval(b, 0, 0.5, deriv=3)
    with pytest.raises(SplineLevelTooSmall):
        BSplineBasis(1, 2, 1.0)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_integral_is_h(L):
    b = BSplineBasis(4, L, 2.0)
    for n in range(b.count):
        lo, hi = b.support(n)
        val = integrate.quad(lambda s: bspline_eval(b, n, s), lo, hi,
                             points=list(b.knots[(b.knots > lo) & (b.knots < hi)]), epsabs=1e-14)[0]
        assert val == pytest.approx(b.h, rel=1e-10)


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_partition_of_unity(L):
    b = BSplineBasis(5, L, 1.5)
    t = np.linspace(L * b.h, (2 ** b.N - L) * b.h, 10 ** 4)
    vals = np.array([bspline_eval(b, n, t) for n in range(b.count)])
    assert vals.min() >= 0.0
    np.testing.assert_allclose(vals.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("L", [2, 3, 4])
def test_derivative_continuity(L):
    b = BSplineBasis(4, L, 1.0)
    d = 1e-13
    for n in range(b.count):
        for k in b.knots[1:-1]:
            for r in range(L):
                lv = bspline_eval(b, n, k - d, r)
                rv = bspline_eval(b, n, k, r)
                assert abs(lv - rv) <= 1e-10 * max(1.0, b.h ** -r)


def test_derivative_matches_finite_difference():
    b = BSplineBasis(3, 3, 1.0)
    t = np.linspace(0.01, 0.99, 37)
    e = 1e-6
    for r in range(1, 3):
        fd = (bspline_eval(b, 2, t + e, r - 1) - bspline_eval(b, 2, t - e, r - 1)) / (2 * e)
        np.testing.assert_allclose(bspline_eval(b, 2, t, r), fd, atol=1e-4 * b.h ** -r)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_two_scale_nesting(L):
    coarse = BSplineBasis(3, L, 1.0)
    fine = BSplineBasis(4, L, 1.0)
    a = splines.two_scale_coefficients(L)
    t = np.random.default_rng(L).uniform(0, 1, 100)
    for n in range(coarse.count):
        comb = sum(a[k] * bspline_eval(fine, 2 * n + k, t) for k in range(L + 2))
        np.testing.assert_allclose(bspline_eval(coarse, n, t), comb, atol=1e-10)


def _traj(t, u, y):
    return Trajectory(t, np.atleast_2d(u.T).T, np.atleast_2d(y.T).T)


def test_zero_data():
    t = np.linspace(0, 1, 257)
    ds = Dataset((_traj(t, np.zeros(257), np.zeros(257)),), L=2, m=1, p=1)
    sa = splines.build_spline_approx(ds, 4)
    np.testing.assert_array_equal(sa.H_tilde, 0.0)
    np.testing.assert_array_equal(sa.Y_tilde, 0.0)
    assert not splines.rank_test(sa, 4).surjective


def test_constant_w_column_is_ch():
    t = np.linspace(0, 1, 257)
    c = 1.7
    ds = Dataset((_traj(t, np.full(257, c), np.full(257, -c)),), L=1, m=1, p=1)
    sa = splines.build_spline_approx(ds, 5)
    h = 1 / 32
    np.testing.assert_allclose(sa.H_tilde[0], c * h, rtol=1e-12)
    np.testing.assert_allclose(sa.H_tilde[1], -c * h, rtol=1e-12)
    assert sa.ncols == 2 ** 5 - 1


def test_constant_data_not_surjective():
    t = np.linspace(0, 1, 257)
    ds = Dataset((_traj(t, np.ones(257), np.ones(257)),), L=2, m=1, p=1)
    rep = splines.rank_test(splines.build_spline_approx(ds, 5), 4)
    assert not rep.surjective
    assert rep.rank == 1


def test_rank_test_identity():
    rep = splines.rank_test(np.hstack([np.eye(6), np.zeros((6, 4))]), 6)
    assert rep.surjective
    assert rep.sigma_min == 1.0
    assert not splines.rank_test(np.zeros((6, 10)), 6).surjective


def test_grid_too_coarse():
    t = np.linspace(0, 1, 33)
    ds = Dataset((_traj(t, np.sin(t), np.cos(t)),), L=1, m=1, p=1)
    with pytest.raises(SplineGridTooCoarse):
        splines.build_spline_approx(ds, 4)
    assert splines.max_level(ds) == 3


def test_columns_against_analytic_quadrature():
    """Spline column vs scipy quadrature of (-1)^l int B^(l) w for analytic w."""
    L = 2
    tau = 1.3
    t = np.linspace(0, tau, 1201)

    def u(s):
        return np.sin(3 * s) + 0.3 * s

    def y(s):
        return np.cos(2 * s) - s ** 2

    ds = Dataset((_traj(t, u(t), y(t)),), L=L, m=1, p=1)
    N = 4
    sa = splines.build_spline_approx(ds, N)
    b = BSplineBasis(N, L, tau)
    for n in range(b.count):
        lo, hi = b.support(n)
        pts = list(b.knots[(b.knots > lo) & (b.knots < hi)])
        ref = []
        for ell in range(L):
            for fn in (u, y):
                ref.append((-1) ** ell * integrate.quad(lambda s: bspline_eval(b, n, s, ell) * fn(s),
                                                        lo, hi, points=pts, epsabs=1e-14)[0])
        np.testing.assert_allclose(sa.H_tilde[:, n], ref, atol=1e-9)
        yref = (-1) ** L * integrate.quad(lambda s: bspline_eval(b, n, min(s, tau), L) * y(s),
                                          lo, hi, points=pts, epsabs=1e-14, limit=200)[0]
        np.testing.assert_allclose(sa.Y_tilde[0, n], yref, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3))
def test_columns_against_adjoint_pairing(seed, L):
    """H_k phi from the spline path equals <phi, T_l^* e_c> built from adjoint_eval."""
    rng = np.random.default_rng(seed)
    N, per = 4, 64
    n = 2 ** N * per + 1
    tau = float(rng.uniform(0.3, 2.0))
    t = np.linspace(0, tau, n)
    h = t[1]
    w = np.column_stack([sum(rng.standard_normal() * np.cos(k * 2 * np.pi * t / tau + rng.uniform(0, 6))
                             for k in range(4)) for _ in range(2)])
    ds = Dataset((_traj(t, w[:, 0], w[:, 1]),), L=L, m=1, p=1)
    sa = splines.build_spline_approx(ds, N)
    b = BSplineBasis(N, L, tau)
    wa = gram.SignalAdjoint(w, h, L)
    scale = np.abs(sa.H_tilde).max()
    for col in range(b.count):
        cL = [bspline_eval(b, col, 0.5 * (b.knots[k] + b.knots[k + 1]), L) for k in range(2 ** N)]
        for ell in range(L):
            g = wa.kernel(L, ell)     # L-th derivative of T_l^* e_c, columns c
            val = sum(cL[k] * quadrature(g[k * per:(k + 1) * per + 1], h) for k in range(2 ** N))
            np.testing.assert_allclose(sa.H_tilde[2 * ell:2 * ell + 2, col], val, atol=1e-6 * max(1, scale))


def test_pendulum_rank(pendulum_noisy):
    ds = pendulum_noisy.dataset
    sa = splines.build_spline_approx(ds, 6)
    assert sa.H_tilde.shape == (6, 25 * (2 ** 6 - 2))
    rep = splines.rank_test(sa, 6)
    print("pendulum N=6", rep)
    assert rep.surjective
    assert rep.rank == 6
    sweep = splines.level_sweep(ds)
    assert sweep[-1][1].surjective
    assert splines.max_level(ds) == 6


def test_export(tmp_path, pendulum_noisy):
    sa = splines.build_spline_approx(pendulum_noisy.dataset, 3)
    meta = splines.export_spline_approx(sa, tmp_path)
    assert meta["N"] == 3
    assert meta["column_spans"][1] == [6, 12]
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "spline_H.csv", delimiter=","), sa.H_tilde)
