"""Independent numerical oracles shared by the unit and acceptance tests."""

import numpy as np

from synthop import gram
from synthop.signals import quadrature
from synthop.splines import BSplineBasis, bspline_eval


def random_signal(rng, t, d):
    cols = []
    for _ in range(d):
        c = sum(rng.standard_normal() * np.cos(2 * np.pi * k * t / t[-1] + rng.uniform(0, 6))
                for k in range(4))
        cols.append(c)
    return np.column_stack(cols)


def pairing_case(seed, L, ell):
    """Both sides of <T_l phi, b> = <phi, T_l^* b>_{H^L_0} for a random spline phi."""
    rng = np.random.default_rng(seed)
    N, r = 4, 32                      # 16 knot intervals, 64 sample steps each
    n = 2 ** N * 2 * r + 1
    tau = float(rng.uniform(0.3, 2.0))
    t = np.linspace(0, tau, n)
    h = t[1]
    d = int(rng.integers(1, 3))
    f = random_signal(rng, t, d)
    b = rng.standard_normal(d)
    basis = BSplineBasis(N, L, tau)
    coef = rng.standard_normal(basis.count)
    per = 2 * r                       # samples per knot interval
    # T_l phi = (-1)^l int phi^(l) f, integrated interval by interval
    lhs = 0.0
    rhs = 0.0
    g = gram.adjoint_eval(f, L, ell, b, h, deriv=L)
    for k in range(2 ** N):
        sl = slice(k * per, (k + 1) * per + 1)
        tk = t[sl]
        mid = 0.5 * (tk[0] + tk[-1])
        if ell < L:
            dphi = sum(c * bspline_eval(basis, n_, np.clip(tk, 0, tau), ell) for n_, c in enumerate(coef))
        else:
            dphi = np.full(tk.size, sum(c * bspline_eval(basis, n_, mid, L) for n_, c in enumerate(coef)))
        lhs += (-1) ** ell * quadrature(dphi * (f[sl] @ b), h)
        cL = sum(c * bspline_eval(basis, n_, mid, L) for n_, c in enumerate(coef))
        rhs += cL * quadrature(g[sl], h)
    return lhs, rhs


def random_closed_loop(rng, band=1e-3):
    """Random monic closed loop (L <= 3, q <= 4) with spectral abscissa outside +-band.

    A random polynomial matrix is shifted so that its abscissa lands on a
    uniform target in [-1, 1]; the eigenvalues are the oracle.
    """
    from synthop import stability as stb
    while True:
        L = int(rng.integers(1, 4))
        q = int(rng.integers(1, 5))
        G = rng.standard_normal((L, q, q)) * 10.0 ** rng.uniform(-1, 1)
        a0 = stb.closed_loop_from_poly(G).spectral_abscissa()
        target = rng.uniform(-1, 1)
        cl = stb.closed_loop_from_poly(stb.shift_polynomial(G, a0 - target))
        if abs(cl.spectral_abscissa()) >= band:
            return cl
