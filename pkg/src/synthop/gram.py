"""Closed-form products of synthesis operators and their adjoints.

For a signal ``f`` on ``[0, tau]`` and order ``L`` the ``l``-th synthesis
operator is ``T_l phi = (-1)^l int phi^(l) f dt`` on the test space
``H^L_0[0, tau]``.  Its adjoint and the products ``S_j T_l^*`` reduce to
repeated integrals of the data and a polynomial correction obtained from an
``L x L`` moment matrix ``Gamma(tau)``:

    ftilde_a   = (-1)^L J^(L-a) f                    a = -L..L
    Lambda_l   = Gamma(tau)^-1 [ftilde_{l-1}(tau); ...; ftilde_{l-L}(tau)]
    (T_l^* b)^(j)(t) = (ftilde_{j+l-L}(t)^T - gamma_{L-j}(t)^T Lambda_l) b
    S_j T_l^*  = (-1)^j int g (ftilde_{j+l-L}^T - gamma_{L-j}^T Lambda_l) dt

where ``J`` is the running integral and entry ``r`` (1-based) of
``gamma_i(t)`` is ``(r-1)!/(i+r-1)! t^(i+r-1)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from math import factorial
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import IllConditionedGamma
from .signals import Dataset, Trajectory, quadrature, repeated_integrals, simpson_weights

log = logging.getLogger(__name__)

GAMMA_WARN_COND = 1e10
GAMMA_ERROR_COND = 1e14
MAX_ORDER = 8
LARGE_ORDER = 5


class IllConditionedGammaWarning(RuntimeWarning):
    pass


def gamma_vectors(i: int, L: int, t) -> np.ndarray:
    """``gamma_i(t)`` for every entry of ``t``; shape ``t.shape + (L,)``."""
    t = np.asarray(t, dtype=float)
    r = np.arange(1, L + 1)
    coef = np.array([factorial(k - 1) / factorial(i + k - 1) for k in r])
    return coef * t[..., None] ** (i + r - 1)


@dataclass(frozen=True)
class GammaBasis:
    """The moment matrix ``Gamma(tau)`` (rows ``gamma_1(tau)^T .. gamma_L(tau)^T``).

    ``Gamma(tau) = diag(tau^i) Gamma(1) diag(tau^(r-1))`` exactly, so solves
    go through the factorization of ``Gamma(1)`` with the diagonal scalings
    applied separately.  ``scaled_cond`` is the condition number of
    ``Gamma(1)``, which is what limits the accuracy of those solves; the
    warning/error thresholds apply to it.
    """

    L: int
    tau: float
    Gamma: np.ndarray
    Gamma_cond: float
    scaled_cond: float
    ill_conditioned: bool
    _lu: tuple = field(repr=False, compare=False)

    def gamma_at(self, i: int, t) -> np.ndarray:
        return gamma_vectors(i, self.L, t)

    def solve(self, rhs) -> np.ndarray:
        """``Gamma(tau)^-1 rhs`` for ``rhs`` of shape (L,) or (L, d)."""
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        rhs2 = rhs.reshape(self.L, -1)
        i = np.arange(1, self.L + 1)
        left = self.tau ** (-i.astype(float))
        right = self.tau ** (-(i - 1).astype(float))
        x = scipy.linalg.lu_solve(self._lu, left[:, None] * rhs2)
        x = right[:, None] * x
        return x.reshape(-1) if vec else x


def gamma_matrix(L: int, tau: float) -> GammaBasis:
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if L > MAX_ORDER:
        raise ValueError(f"L is capped at {MAX_ORDER}, got {L}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if L >= LARGE_ORDER:
        warnings.warn(f"L={L}: Gamma(tau) is badly conditioned for large orders",
                      IllConditionedGammaWarning, stacklevel=2)
    G1 = np.vstack([gamma_vectors(i, L, 1.0) for i in range(1, L + 1)])
    scaled_cond = float(np.linalg.cond(G1))
    if not np.isfinite(scaled_cond) or scaled_cond > GAMMA_ERROR_COND:
        raise IllConditionedGamma(f"Gamma is singular to working precision (cond={scaled_cond:.3g})")
    ill = scaled_cond > GAMMA_WARN_COND
    if ill:
        warnings.warn(f"Gamma(1) condition number {scaled_cond:.3g} exceeds {GAMMA_WARN_COND:g}",
                      IllConditionedGammaWarning, stacklevel=2)
    G = np.vstack([gamma_vectors(i, L, tau) for i in range(1, L + 1)])
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(G))
    return GammaBasis(L, float(tau), G, cond, scaled_cond, ill, scipy.linalg.lu_factor(G1))


class SignalAdjoint:
    """Repeated integrals and ``Lambda_l`` of one sampled signal, computed once.

    ``samples`` is ``n x d``.  Every ``ftilde_a`` (a = -L..L) and every
    ``Lambda_l`` (l = 0..L) is served from this cache.
    """

    def __init__(self, samples, h: float, L: int, basis: Optional[GammaBasis] = None):
        f = np.asarray(samples, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        self.f = f
        self.h = float(h)
        self.L = L
        self.n = f.shape[0]
        self.tau = self.h * (self.n - 1)
        self.t = np.linspace(0.0, self.tau, self.n)
        self.basis = basis if basis is not None else gamma_matrix(L, self.tau)
        sign = -1.0 if L % 2 else 1.0
        self._J = [sign * J for J in repeated_integrals(f, self.h, 2 * L)]
        self._lam = {}
        self._gam = {}

    def ftilde(self, a: int) -> np.ndarray:
        if not -self.L <= a <= self.L:
            raise ValueError(f"index must lie in [-L, L], got {a}")
        return self._J[self.L - a]

    def gamma(self, i: int) -> np.ndarray:
        if i not in self._gam:
            self._gam[i] = gamma_vectors(i, self.L, self.t)
        return self._gam[i]

    def lam(self, ell: int) -> np.ndarray:
        if ell not in self._lam:
            stack = np.vstack([self.ftilde(ell - i)[-1] for i in range(1, self.L + 1)])
            self._lam[ell] = self.basis.solve(stack)
        return self._lam[ell]

    def kernel(self, j: int, ell: int) -> np.ndarray:
        """Node values of ``ftilde_{j+l-L} - gamma_{L-j} Lambda_l`` (n x d).

        Column ``c`` is the ``j``-th derivative of ``T_l^* e_c``.
        """
        return self.ftilde(j + ell - self.L) - self.gamma(self.L - j) @ self.lam(ell)


def f_tilde(samples, h: float, L: int, index: int) -> np.ndarray:
    """``ftilde_index`` at every node: ``(-1)^L J^(L-index) f``."""
    return SignalAdjoint(samples, h, L).ftilde(index)


def lambda_matrix(basis: GammaBasis, ftilde_at_tau) -> np.ndarray:
    """``Gamma(tau)^-1`` applied to the stacked rows ``ftilde_{l-1}(tau) .. ftilde_{l-L}(tau)``."""
    return basis.solve(np.atleast_2d(np.asarray(ftilde_at_tau, dtype=float)).reshape(basis.L, -1))


def _as_adjoint(f, h, L):
    return f if isinstance(f, SignalAdjoint) else SignalAdjoint(f, h, L)


def op_product(g_samples, f_samples, L: int, j: int, ell: int, h: float) -> np.ndarray:
    """``S_j T_l^*`` for ``S`` built on ``g`` (n x a) and ``T`` on ``f`` (n x b)."""
    if not (0 <= j <= L and 0 <= ell <= L):
        raise ValueError(f"j and ell must lie in [0, L], got j={j}, ell={ell}")
    g = np.asarray(g_samples, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    fa = _as_adjoint(f_samples, h, L)
    if g.shape[0] != fa.n:
        raise ValueError(f"grid mismatch: g has {g.shape[0]} samples, f has {fa.n}")
    return _product(g, fa, j, ell)


def _product(g, fa: SignalAdjoint, j, ell):
    w = simpson_weights(fa.n, fa.h)
    sign = -1.0 if j % 2 else 1.0
    return sign * ((g * w[:, None]).T @ fa.kernel(j, ell))


def adjoint_eval(f_samples, L: int, ell: int, b, h: float, deriv: int = 0) -> np.ndarray:
    """Node values of ``(T_l^* b)^(deriv)``; ``deriv = 0`` gives the adjoint itself."""
    if not 0 <= ell <= L:
        raise ValueError(f"ell must lie in [0, L], got {ell}")
    fa = _as_adjoint(f_samples, h, L)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return fa.kernel(deriv, ell) @ b


# ---------------------------------------------------------------------------
# Gram assembly


@dataclass(frozen=True)
class TrajectoryGram:
    WW: np.ndarray              # (L, L, q, q): block (j, l) = W_j W_l^*
    YW: np.ndarray              # (L, p, q): block l = Y_L W_l^*
    YY: np.ndarray              # (p, p)
    VV: Optional[np.ndarray]    # (p, p) or None


@dataclass(frozen=True)
class GramSet:
    HH: np.ndarray
    YLH: np.ndarray
    YLYL: np.ndarray
    V0V0: Optional[np.ndarray]
    per_traj: tuple
    L: int
    m: int
    p: int
    asymmetry: dict = field(default_factory=dict, compare=False)

    @property
    def q(self):
        return self.m + self.p


def _sym(M):
    return 0.5 * (M + M.T)


def _rel_asym(M):
    scale = np.linalg.norm(M)
    return float(np.linalg.norm(M - M.T) / scale) if scale > 0 else 0.0


def hh_from_blocks(WW: np.ndarray) -> np.ndarray:
    L, _, q, _ = WW.shape
    return WW.transpose(0, 2, 1, 3).reshape(L * q, L * q)


def trajectory_gram(traj: Trajectory, L: int, basis: Optional[GammaBasis] = None) -> TrajectoryGram:
    h = traj.h
    basis = basis if basis is not None else gamma_matrix(L, traj.tau)
    w = traj.w
    q, p = w.shape[1], traj.p
    wa = SignalAdjoint(w, h, L, basis)
    ya = SignalAdjoint(traj.y, h, L, basis)
    WW = np.empty((L, L, q, q))
    YW = np.empty((L, p, q))
    for ell in range(L):
        for j in range(L):
            WW[j, ell] = _product(w, wa, j, ell)
        YW[ell] = _product(traj.y, wa, L, ell)
    YY = _product(traj.y, ya, L, L)
    VV = None
    if traj.v is not None:
        va = SignalAdjoint(traj.v, h, L, basis)
        VV = _product(traj.v, va, 0, 0)
    return TrajectoryGram(WW, YW, YY, VV)


def build_gram_set(ds: Dataset) -> GramSet:
    L, q, p = ds.L, ds.q, ds.p
    bases = {}
    per = []
    for tr in ds.trajectories:
        key = round(tr.tau, 15)
        if key not in bases:
            bases[key] = gamma_matrix(L, tr.tau)
        per.append(trajectory_gram(tr, L, bases[key]))
    HH = np.zeros((q * L, q * L))
    YLH = np.zeros((p, q * L))
    YLYL = np.zeros((p, p))
    for tg in per:  # fixed reduction order
        HH += hh_from_blocks(tg.WW)
        YLH += tg.YW.transpose(1, 0, 2).reshape(p, L * q)
        YLYL += tg.YY
    V0V0 = None
    if ds.has_noise:
        V0V0 = np.zeros((p, p))
        for tg in per:
            V0V0 += tg.VV
    asym = {"HH": _rel_asym(HH), "YLYL": _rel_asym(YLYL)}
    if V0V0 is not None:
        asym["V0V0"] = _rel_asym(V0V0)
    log.debug("raw relative Gram asymmetry: %s", asym)
    return GramSet(
        HH=_sym(HH), YLH=YLH, YLYL=_sym(YLYL),
        V0V0=None if V0V0 is None else _sym(V0V0),
        per_traj=tuple(per), L=L, m=ds.m, p=p, asymmetry=asym,
    )


def noise_gram(ds: Dataset) -> np.ndarray:
    """``sum_k V_0k V_0k^*`` from the trajectories' noise records."""
    L = ds.L
    total = np.zeros((ds.p, ds.p))
    for tr in ds.trajectories:
        v = tr.noise()
        va = SignalAdjoint(v, tr.h, L)
        total += _product(v, va, 0, 0)
    return _sym(total)


# ---------------------------------------------------------------------------
# Pi and the lifted matrix N


@dataclass(frozen=True)
class PiMatrix:
    Pi: np.ndarray
    Theta: np.ndarray
    p: int
    qL: int

    @property
    def Pi11(self):
        return self.Pi[: self.p, : self.p]

    @property
    def Pi12(self):
        return self.Pi[: self.p, self.p:]

    @property
    def Pi22(self):
        return self.Pi[self.p:, self.p:]


def check_theta(Theta, p: int) -> np.ndarray:
    """Validated symmetric ``Theta``; a scalar ``s`` stands for ``s * I_p``."""
    Theta = np.asarray(Theta, dtype=float)
    if Theta.ndim == 0:
        Theta = float(Theta) * np.eye(p)
    Theta = np.atleast_2d(Theta)
    if Theta.shape != (p, p):
        raise ValueError(f"Theta must be {p}x{p}, got {Theta.shape}")
    scale = max(1.0, float(np.abs(Theta).max()))
    if np.abs(Theta - Theta.T).max() > 1e-12 * scale:
        raise ValueError("Theta must be symmetric")
    Theta = _sym(Theta)
    if np.linalg.eigvalsh(Theta).min() < -1e-12 * scale:
        raise ValueError("Theta must be nonnegative definite")
    return Theta


def build_pi(gs: GramSet, Theta) -> PiMatrix:
    Theta = check_theta(Theta, gs.p)
    Pi = np.block([[Theta - gs.YLYL, -gs.YLH], [-gs.YLH.T, -gs.HH]])
    return PiMatrix(_sym(Pi), Theta, gs.p, gs.HH.shape[0])


def embedding(q: int, L: int, p: int) -> np.ndarray:
    """``[[J_p, 0], [0, I_qL]]`` with ``J_p = [0_{p x (qL-p)}, I_p]``."""
    qL = q * L
    E = np.zeros((p + qL, 2 * qL))
    E[:p, qL - p:qL] = np.eye(p)
    E[p:, qL:] = np.eye(qL)
    return E


@dataclass(frozen=True)
class BigN:
    N: np.ndarray
    qL: int

    @property
    def N11(self):
        return self.N[: self.qL, : self.qL]

    @property
    def N12(self):
        return self.N[: self.qL, self.qL:]

    @property
    def N22(self):
        return self.N[self.qL:, self.qL:]


def build_big_n(pi: PiMatrix, q: int, L: int, p: int) -> BigN:
    if pi.Pi.shape != (p + q * L, p + q * L):
        raise ValueError(f"Pi has shape {pi.Pi.shape}, expected {(p + q * L,) * 2}")
    E = embedding(q, L, p)
    return BigN(_sym(E.T @ pi.Pi @ E), q * L)


def inner_h0(dphi_a, dphi_b, h: float) -> float:
    """``<phi, psi>_{H^L_0}`` given node values of the ``L``-th derivatives."""
    a = np.asarray(dphi_a, dtype=float)
    b = np.asarray(dphi_b, dtype=float)
    return float(quadrature(a * b, h))


def save_matrix_csv(M, path) -> None:
    """Row-major CSV with 17 significant digits."""
    np.savetxt(path, np.atleast_2d(np.asarray(M, dtype=float)), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
