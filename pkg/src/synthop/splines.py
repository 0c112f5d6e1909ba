"""Dyadic B-spline test functions and the finite matrices built from them.

On ``[0, tau]`` with ``h = tau / 2**N`` the degree-``L`` splines
``B^L_{N,n}``, ``n = 0 .. 2**N - L - 1``, lie in ``H^L_0``.  Their ``L``-th
derivative is piecewise constant, equal to ``(-1)^k C(L, k) / h^L`` on the
``k``-th interval of the support.  Integrating by parts ``L - l`` times turns
``W_l B = (-1)^l int B^(l) w`` into differences of the repeated integral
``J^(L-l+1) w`` at the knots, so every column is exact up to the accuracy of
the repeated integrals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import ceil, comb, factorial, log2
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SplineGridTooCoarse, SplineLevelTooSmall
from .signals import Dataset, Trajectory, repeated_integrals

RANK_RTOL = 1e-8
GRID_FACTOR = 4  # sample step must be at most h / GRID_FACTOR


@dataclass(frozen=True)
class BSplineBasis:
    N: int
    L: int
    tau: float

    def __post_init__(self):
        if self.N < 0 or self.L < 0:
            raise SplineLevelTooSmall(f"N and L must be nonnegative, got N={self.N}, L={self.L}")
        if 2 ** self.N < self.L + 1:
            raise SplineLevelTooSmall(
                f"level N={self.N} gives {2 ** self.N} intervals, need at least L+1={self.L + 1}"
            )
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def h(self) -> float:
        return self.tau / 2 ** self.N

    @property
    def count(self) -> int:
        return 2 ** self.N - self.L

    @property
    def knots(self) -> np.ndarray:
        return np.arange(2 ** self.N + 1) * self.h

    def support(self, n: int):
        return n * self.h, (n + self.L + 1) * self.h


def _cardinal(d: int, n: int, t: np.ndarray, h: float) -> np.ndarray:
    """Degree-``d`` spline on the knots ``n h, ..., (n+d+1) h`` by the degree recursion."""
    if d == 0:
        return ((t >= n * h) & (t < (n + 1) * h)).astype(float)
    left = (t - n * h) / (d * h) * _cardinal(d - 1, n, t, h)
    right = ((n + d + 1) * h - t) / (d * h) * _cardinal(d - 1, n + 1, t, h)
    return left + right


def _derivative(d: int, n: int, t: np.ndarray, h: float, r: int) -> np.ndarray:
    # r-fold application of d/dt B^d_n = (B^{d-1}_n - B^{d-1}_{n+1}) / h
    out = np.zeros_like(t)
    for j in range(r + 1):
        out += (-1) ** j * comb(r, j) * _cardinal(d - r, n + j, t, h)
    return out / h ** r


def bspline_eval(basis: BSplineBasis, n: int, t, deriv: int = 0):
    """Value of ``B^L_{N,n}`` (or its ``deriv``-th derivative) at ``t``.

    The ``L``-th derivative is evaluated from the right at knots.
    """
    if not 0 <= n < basis.count:
        raise IndexError(f"spline index {n} outside 0..{basis.count - 1}")
    if not 0 <= deriv <= basis.L:
        raise ValueError(f"deriv must lie in 0..{basis.L}, got {deriv}")
    ts = np.asarray(t, dtype=float)
    if np.any(ts < 0) or np.any(ts > basis.tau * (1 + 1e-14)):
        raise ValueError("t must lie in [0, tau]")
    out = _derivative(basis.L, n, np.atleast_1d(ts), basis.h, deriv)
    return out.reshape(ts.shape) if ts.ndim else float(out[0])


def two_scale_coefficients(L: int) -> np.ndarray:
    """``B^L_{N,n} = sum_k a_k B^L_{N+1,2n+k}`` with ``a_k = 2^-L C(L+1, k)``."""
    return np.array([comb(L + 1, k) for k in range(L + 2)], dtype=float) / 2 ** L


def lth_derivative_weights(L: int, h: float) -> np.ndarray:
    """Constant values of the ``L``-th derivative on the ``L+1`` support intervals."""
    return np.array([(-1) ** k * comb(L, k) for k in range(L + 1)], dtype=float) / h ** L


# ---------------------------------------------------------------------------
# repeated integrals off the sample grid

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def repeated_integral_at(J: list, h: float, s, order: int) -> np.ndarray:
    """``J^order w`` at arbitrary times ``s``.

    ``J`` holds node values ``J^0 w = w, J^1 w, ..., J^order w`` (each n x d).
    From the node ``t_i`` below ``s`` we use the Taylor expansion in the
    lower-order integrals plus the remainder
    ``int_{t_i}^s (s-r)^(order-1)/(order-1)! w(r) dr`` with ``w`` replaced by
    its quadratic interpolant on three neighbouring nodes.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    w = J[0]
    n = w.shape[0]
    i = np.clip(np.floor(s / h + 1e-9).astype(int), 0, n - 2)
    delta = s - i * h
    out = np.zeros((s.size, w.shape[1]))
    for j in range(order):
        out += (delta ** j / factorial(j))[:, None] * J[order - j][i]
    # quadratic interpolant through nodes i0, i0+1, i0+2
    i0 = np.minimum(i, n - 3)
    f0, f1, f2 = w[i0], w[i0 + 1], w[i0 + 2]
    off = (i - i0) * h  # shift of t_i relative to t_{i0}
    rem = np.zeros_like(out)
    for x, wt in zip(_GL_X, _GL_W):
        r = 0.5 * (x + 1.0) * delta  # in [0, delta], measured from t_i
        z = (r + off) / h            # local coordinate from t_{i0}
        pw = (f0 * ((z - 1) * (z - 2) / 2)[:, None]
              - f1 * (z * (z - 2))[:, None]
              + f2 * (z * (z - 1) / 2)[:, None])
        ker = (delta - r) ** (order - 1) / factorial(order - 1)
        rem += (0.5 * delta * wt * ker)[:, None] * pw
    return out + rem


# ---------------------------------------------------------------------------
# H-tilde and Y-tilde


@dataclass(frozen=True)
class SplineApprox:
    H_tilde: np.ndarray
    Y_tilde: np.ndarray
    N: int
    L: int
    spans: tuple                   # (start, stop) columns per trajectory
    sample_steps: tuple
    knot_steps: tuple
    blocks_H: tuple = field(repr=False, default=())
    blocks_Y: tuple = field(repr=False, default=())

    @property
    def ncols(self) -> int:
        return self.H_tilde.shape[1]


def trajectory_columns(traj: Trajectory, basis: BSplineBasis):
    """``(H_k B_n, Y_{L,k} B_n)`` for every spline of ``basis`` (as column blocks)."""
    L = basis.L
    if traj.h > basis.h / GRID_FACTOR * (1 + 1e-12):
        raise SplineGridTooCoarse(
            f"sample step {traj.h:.6g} exceeds knot spacing / {GRID_FACTOR} = {basis.h / GRID_FACTOR:.6g}"
        )
    w = traj.w
    Jw = repeated_integrals(w, traj.h, L + 1)
    knots = basis.knots
    coef = lth_derivative_weights(L, basis.h)
    sign = -1.0 if L % 2 else 1.0
    q = w.shape[1]
    count = basis.count
    H = np.zeros((q * L, count))
    for ell in range(L):
        k = L - ell + 1
        vals = repeated_integral_at(Jw, traj.h, knots, k)  # (#knots, q)
        diffs = np.diff(vals, axis=0)                      # integral of J^(L-ell) w per interval
        for n in range(count):
            H[ell * q:(ell + 1) * q, n] = sign * coef @ diffs[n:n + L + 1]
    Jy = repeated_integrals(traj.y, traj.h, 1)
    yd = np.diff(repeated_integral_at(Jy, traj.h, knots, 1), axis=0)
    Y = np.zeros((traj.p, count))
    for n in range(count):
        Y[:, n] = sign * coef @ yd[n:n + L + 1]
    return H, Y


def build_spline_approx(ds: Dataset, N: int) -> SplineApprox:
    Hs, Ys, spans, steps, ksteps = [], [], [], [], []
    col = 0
    for traj in ds.trajectories:
        basis = BSplineBasis(N, ds.L, traj.tau)
        H, Y = trajectory_columns(traj, basis)
        Hs.append(H)
        Ys.append(Y)
        spans.append((col, col + H.shape[1]))
        col += H.shape[1]
        steps.append(traj.h)
        ksteps.append(basis.h)
    return SplineApprox(np.hstack(Hs), np.hstack(Ys), N, ds.L, tuple(spans), tuple(steps),
                        tuple(ksteps), tuple(Hs), tuple(Ys))


def minimal_level(L: int) -> int:
    return int(ceil(log2(L + 1)))


def max_level(ds: Dataset) -> int:
    """Largest ``N`` whose knot spacing still resolves every trajectory's sample grid."""
    worst = min(tr.tau / (GRID_FACTOR * tr.h) for tr in ds.trajectories)
    return int(np.floor(log2(worst) + 1e-12))


@dataclass(frozen=True)
class RankReport:
    surjective: bool
    sigma_min: float
    sigma_max: float
    rank: int


def rank_test(sa, qL: Optional[int] = None) -> RankReport:
    """Surjectivity of ``H_tilde`` with ``sigma_qL > 1e-8 max(1, sigma_max)``."""
    H = sa.H_tilde if isinstance(sa, SplineApprox) else np.atleast_2d(np.asarray(sa, dtype=float))
    qL = H.shape[0] if qL is None else qL
    if H.size == 0 or H.shape[1] < qL:
        return RankReport(False, 0.0, float(np.linalg.norm(H, 2)) if H.size else 0.0, 0)
    s = np.linalg.svd(H, compute_uv=False)
    tol = RANK_RTOL * max(1.0, float(s[0]))
    smin = float(s[qL - 1]) if s.size >= qL else 0.0
    return RankReport(bool(smin > tol), smin, float(s[0]), int(np.sum(s > tol)))


def level_sweep(ds: Dataset, N_max: Optional[int] = None):
    """Rank reports for ``N = ceil(log2(L+1)) .. N_max``; stops at the first surjective level."""
    N_max = max_level(ds) if N_max is None else N_max
    out = []
    for N in range(minimal_level(ds.L), N_max + 1):
        sa = build_spline_approx(ds, N)
        rep = rank_test(sa, ds.q * ds.L)
        out.append((N, rep))
        if rep.surjective:
            break
    return out


def export_spline_approx(sa: SplineApprox, directory, prefix: str = "spline") -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"H_tilde": d / f"{prefix}_H.csv", "Y_tilde": d / f"{prefix}_Y.csv"}
    np.savetxt(paths["H_tilde"], sa.H_tilde, delimiter=",", fmt="%.17g")
    np.savetxt(paths["Y_tilde"], sa.Y_tilde, delimiter=",", fmt="%.17g")
    meta = {
        "N": sa.N,
        "L": sa.L,
        "sample_steps": list(sa.sample_steps),
        "knot_steps": list(sa.knot_steps),
        "column_spans": [list(s) for s in sa.spans],
        "files": {k: v.name for k, v in paths.items()},
    }
    with (d / f"{prefix}.json").open("w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return meta
