"""Data consistency, the preconditions of the stabilization LMI, controller design
and identification.

``R`` is consistent with the data at noise level ``Theta`` iff the quadratic
form ``[I; R^T]^T Pi [I; R^T]`` is nonnegative definite.  The design LMI in
``(Phi, D)`` is posed after a diagonal congruence that brings the Gram blocks
to unit scale (see ``assemble_stabilization_lmi``); congruence does not change
strict feasibility but makes the margin comparable across datasets.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import sdp, splines
from .errors import Infeasible, NotSurjective, PreconditionFailed, SolverError
from .gram import BigN, GramSet, PiMatrix, build_big_n, build_gram_set, build_pi, check_theta
from .signals import Dataset
from .stability import (ArSystem, Controller, close_loop, is_hurwitz, lyapunov_lmi_check,
                        shift_matrix)

log = logging.getLogger(__name__)

MEMBERSHIP_RTOL = 1e-8
EPS_RTOL = 1e-6
HH_RTOL = 1e-10
THETA_LIFT = 1e-12


class NoisePresent(UserWarning):
    """Identification was asked for on data that carry a nonzero noise record."""


# ---------------------------------------------------------------------------
# consistency


@dataclass(frozen=True)
class ConsistencyReport:
    quad_form: np.ndarray
    member: bool
    min_eig: float
    tol: float


def membership_tol(pi: PiMatrix) -> float:
    return MEMBERSHIP_RTOL * (1.0 + float(np.linalg.norm(pi.Pi)))


def quad_form(pi: PiMatrix, R) -> np.ndarray:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Z = np.vstack([np.eye(pi.p), R.T])
    Q = Z.T @ pi.Pi @ Z
    return 0.5 * (Q + Q.T)


def consistency_test(pi: PiMatrix, sys, tol: Optional[float] = None) -> ConsistencyReport:
    R = sys.R if isinstance(sys, ArSystem) else np.atleast_2d(np.asarray(sys, dtype=float))
    if R.shape != (pi.p, pi.qL):
        raise ValueError(f"system matrix is {R.shape}, expected {(pi.p, pi.qL)}")
    Q = quad_form(pi, R)
    tol = membership_tol(pi) if tol is None else tol
    lo = float(np.linalg.eigvalsh(Q).min())
    return ConsistencyReport(Q, lo >= -tol, lo, tol)


def membership_pi(gs: GramSet, Theta) -> PiMatrix:
    """``Pi`` for membership tests; a zero ``Theta`` is lifted to ``1e-12 I``."""
    Theta = check_theta(Theta, gs.p)
    if not np.any(Theta):
        Theta = THETA_LIFT * np.eye(gs.p)
    return build_pi(gs, Theta)


def center_system(gs: GramSet) -> np.ndarray:
    """``R_hat = -Y_L H^* (HH^*)^-1``, the center of the consistent set."""
    return -np.linalg.solve(gs.HH, gs.YLH.T).T


# ---------------------------------------------------------------------------
# preconditions


@dataclass(frozen=True)
class PreconditionReport:
    hh_min_eig: float
    hh_max_eig: float
    surjective: bool
    n22_neg: bool
    kernel_inclusion: bool
    schur_min_eig: float
    schur_psd: bool
    slemma_ok: bool
    tol: float
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def check_preconditions(pi: PiMatrix, bn: BigN, gs: Optional[GramSet] = None) -> PreconditionReport:
    notes = []
    HH = gs.HH if gs is not None else -bn.N22
    ev = np.linalg.eigvalsh(HH)
    hh_min, hh_max = float(ev[0]), float(ev[-1])
    surjective = hh_max > 0 and hh_min > HH_RTOL * hh_max
    ev22 = np.linalg.eigvalsh(bn.N22)
    n22_neg = bool(ev22[-1] < 0 and -ev22[-1] > HH_RTOL * max(1e-300, -ev22[0]))
    tol = membership_tol(pi)
    if n22_neg:
        # N22 invertible, so Ker N22 = {0} and the inclusion holds trivially
        kernel = True
        notes.append("kernel inclusion automatic since N22 is negative definite")
        S = bn.N11 - bn.N12 @ np.linalg.solve(bn.N22, bn.N12.T)
    else:
        U, s, Vt = np.linalg.svd(bn.N22)
        null = Vt[s <= HH_RTOL * max(1.0, s[0] if s.size else 1.0)]
        kernel = bool(np.allclose(bn.N12 @ null.T, 0.0, atol=tol))
        S = bn.N11 - bn.N12 @ np.linalg.pinv(bn.N22) @ bn.N12.T
    S = 0.5 * (S + S.T)
    # only the trailing p x p corner is structurally nonzero
    schur_psd = float(np.linalg.eigvalsh(S).min()) >= -tol
    schur_min = float(np.linalg.eigvalsh(S[-pi.p:, -pi.p:]).min())
    if not schur_psd:
        notes.append("Schur complement is indefinite: no system is consistent with the data at this Theta")
    return PreconditionReport(hh_min, hh_max, bool(surjective), n22_neg, kernel, schur_min,
                              bool(schur_psd), bool(n22_neg and kernel and schur_psd), tol, tuple(notes))


# ---------------------------------------------------------------------------
# the stabilization LMI


@dataclass(frozen=True)
class Dims:
    L: int
    m: int
    p: int

    @property
    def q(self):
        return self.m + self.p

    @property
    def qL(self):
        return self.q * self.L


@dataclass(frozen=True)
class StabilizationLmi:
    problem: sdp.SdpProblem
    dims: Dims
    eps: float
    scale: np.ndarray      # d: Phi = diag(d) Phi' diag(d), D = D' diag(d)
    N: np.ndarray          # unscaled lifted matrix

    @property
    def n_phi(self) -> int:
        qL = self.dims.qL
        return qL * (qL + 1) // 2

    def unpack(self, y):
        """``(Phi, D)`` in the original coordinates from a solution vector."""
        qL, m = self.dims.qL, self.dims.m
        Phi_s = sdp.unpack_sym(y[: self.n_phi], qL)
        D_s = np.asarray(y[self.n_phi: self.n_phi + m * qL]).reshape(m, qL)
        d = self.scale
        return d[:, None] * Phi_s * d[None, :], D_s * d[None, :]


def big_lmi(Phi, D, dims: Dims) -> np.ndarray:
    """``[[X + X^T, Phi], [Phi, 0]]`` with ``X = [-J Phi; D; 0]``."""
    qL = dims.qL
    X = np.vstack([-shift_matrix(dims.q, dims.L) @ Phi, D, np.zeros((dims.p, qL))])
    return np.block([[X + X.T, Phi], [Phi, np.zeros((qL, qL))]])


def default_scale(bn: BigN) -> np.ndarray:
    d = np.sqrt(np.clip(np.diag(-bn.N22), 0.0, None))
    return np.where(d > 0, d, 1.0)


def assemble_stabilization_lmi(bn: BigN, dims, eps: Optional[float] = None,
                               balance: bool = True) -> StabilizationLmi:
    """Blocks ``Phi' - eps I`` and ``S (BigLMI - N) S - eps I``.

    With ``d = sqrt(diag(HH^*))`` the unknowns are ``Phi' = diag(d)^-1 Phi diag(d)^-1``
    (upper triangle, row-major) and ``D' = D diag(d)^-1`` (row-major), and
    ``S = diag(1/d, 1/d)``.  The default margin is ``1e-6 (1 + |S N S|_F)``.
    """
    if not isinstance(dims, Dims):
        dims = Dims(*dims)
    qL, m = dims.qL, dims.m
    if bn.N.shape != (2 * qL, 2 * qL):
        raise ValueError(f"N is {bn.N.shape}, expected {(2 * qL, 2 * qL)}")
    d = default_scale(bn) if balance else np.ones(qL)
    s = np.concatenate([1.0 / d, 1.0 / d])
    Ns = s[:, None] * bn.N * s[None, :]
    Ns = 0.5 * (Ns + Ns.T)
    if eps is None:
        eps = EPS_RTOL * (1.0 + float(np.linalg.norm(Ns)))
    basis = sdp.sym_basis(qL)
    F_phi, F_big = [], []
    for E in basis:
        F_phi.append(E)
        Phi = d[:, None] * E * d[None, :]
        F_big.append(s[:, None] * big_lmi(Phi, np.zeros((m, qL)), dims) * s[None, :])
    for i in range(m):
        for j in range(qL):
            Dm = np.zeros((m, qL))
            Dm[i, j] = d[j]
            F_phi.append(np.zeros((qL, qL)))
            F_big.append(s[:, None] * big_lmi(np.zeros((qL, qL)), Dm, dims) * s[None, :])
    F_big = np.array([0.5 * (F + F.T) for F in F_big])
    prob = sdp.SdpProblem(
        nvars=len(F_phi),
        blocks=[
            sdp.LmiBlock(-eps * np.eye(qL), np.array(F_phi), name="Phi"),
            sdp.LmiBlock(-Ns - eps * np.eye(2 * qL), F_big, name="BigLMI-N"),
        ],
    )
    return StabilizationLmi(prob, dims, float(eps), d, bn.N)


# ---------------------------------------------------------------------------
# design


@dataclass
class DesignOptions:
    epsilon: Optional[float] = None
    solver: Optional[str] = None
    enforce_preconditions: bool = True
    balance: bool = True
    candidates: Sequence = ()
    verify_lyapunov: bool = True


@dataclass
class StabilizationCertificate:
    Phi: np.ndarray
    D: np.ndarray
    C: np.ndarray
    phi_margin: float
    lmi_margin: float
    eps: float
    t_star: float
    dims: Dims
    Theta: np.ndarray
    solver: str = ""
    solver_status: str = ""
    preconditions: Optional[PreconditionReport] = None
    verification: list = field(default_factory=list)

    @property
    def controller(self) -> Controller:
        return Controller(self.C, self.dims.L, self.dims.m, self.dims.p)

    def to_dict(self) -> dict:
        return {
            "kind": "certificate",
            "L": self.dims.L, "m": self.dims.m, "p": self.dims.p,
            "Phi": self.Phi.tolist(),
            "D": self.D.tolist(),
            "C": self.C.tolist(),
            "controller": self.controller.to_dict(),
            "margins": {"phi": self.phi_margin, "lmi": self.lmi_margin,
                        "eps": self.eps, "t_star": self.t_star},
            "Theta": self.Theta.tolist(),
            "solver": {"name": self.solver, "status": self.solver_status},
            "preconditions": None if self.preconditions is None else self.preconditions.to_dict(),
            "verification": self.verification,
        }

    def save(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def certificate_margins(lmi: StabilizationLmi, y) -> tuple:
    """Eigen re-check of both blocks (scaled coordinates, margin ``eps`` removed)."""
    m = lmi.problem.margins(np.asarray(y))
    return m[0] + lmi.eps, m[1] + lmi.eps


def verify_controller(C, dims: Dims, systems, solver=None, lyapunov: bool = True) -> list:
    out = []
    ctrl = Controller(C, dims.L, dims.m, dims.p)
    for name, sys in systems:
        cl = close_loop(sys, ctrl)
        entry = {"system": name, "hurwitz": is_hurwitz(cl), "spectral_abscissa": cl.spectral_abscissa()}
        if lyapunov:
            try:
                entry["lyapunov"] = lyapunov_lmi_check(sys, ctrl, solver=solver).stable
            except SolverError as exc:
                entry["lyapunov"] = None
                entry["lyapunov_error"] = str(exc)
        out.append(entry)
    return out


def design_from_grams(gs: GramSet, Theta, opts: Optional[DesignOptions] = None) -> StabilizationCertificate:
    opts = opts or DesignOptions()
    dims = Dims(gs.L, gs.m, gs.p)
    pi = build_pi(gs, Theta)
    bn = build_big_n(pi, dims.q, dims.L, dims.p)
    pre = check_preconditions(pi, bn, gs)
    if opts.enforce_preconditions and not (pre.surjective and pre.slemma_ok):
        raise PreconditionFailed("preconditions of the stabilization LMI fail", pre)
    lmi = assemble_stabilization_lmi(bn, dims, eps=opts.epsilon, balance=opts.balance)
    res = sdp.solve(lmi.problem, solver=opts.solver, eps=0.0)
    if res.status is sdp.Status.INFEASIBLE:
        best = "solver certified infeasibility" if res.t is None else f"best margin {res.t:.3e}"
        raise Infeasible(f"data are not informative at this Theta ({best}, required {lmi.eps:.3e})", res)
    if res.status is not sdp.Status.FEASIBLE:
        raise SolverError(f"solver returned no usable certificate ({res.solver_status})")
    Phi, D = lmi.unpack(res.y)
    C = np.linalg.solve(Phi.T, D.T).T  # D Phi^-1
    if not np.all(np.isfinite(C)):
        raise SolverError("controller has non-finite entries")
    pm, lm = certificate_margins(lmi, res.y)
    systems = [("center", ArSystem(center_system(gs), dims.L, dims.m, dims.p))]
    systems += [(f"candidate_{i}", s) for i, s in enumerate(opts.candidates)]
    ver = verify_controller(C, dims, systems, opts.solver, opts.verify_lyapunov)
    for v in ver:
        if not v["hurwitz"]:
            log.warning("designed controller does not stabilize %s (abscissa %.3g)",
                        v["system"], v["spectral_abscissa"])
    return StabilizationCertificate(Phi, D, C, pm, lm, lmi.eps, float(res.t), dims, pi.Theta,
                                    res.solver, res.solver_status, pre, ver)


def design_controller(ds: Dataset, Theta, opts: Optional[DesignOptions] = None) -> StabilizationCertificate:
    return design_from_grams(build_gram_set(ds), Theta, opts)


# ---------------------------------------------------------------------------
# sampling the consistent set


def sample_consistent(gs: GramSet, Theta, count: int, rng=None, shrink: float = 0.99,
                      iters: int = 60) -> list:
    """Systems from the consistent set: random direction from the center, bisection
    to the boundary, then a step back by ``shrink``."""
    rng = np.random.default_rng(rng)
    pi = build_pi(gs, Theta)
    tol = membership_tol(pi)
    R0 = center_system(gs)
    if consistency_test(pi, R0, tol=0.0).min_eig < 0:
        return []
    out = []
    for _ in range(count):
        Dm = rng.standard_normal(R0.shape)
        Dm /= np.linalg.norm(Dm)
        lo, hi = 0.0, 1.0
        while consistency_test(pi, R0 + hi * Dm, tol=0.0).member:
            hi *= 2.0
            if hi > 1e12:
                break
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if consistency_test(pi, R0 + mid * Dm, tol=0.0).member:
                lo = mid
            else:
                hi = mid
        R = R0 + shrink * lo * Dm
        if consistency_test(pi, R, tol=tol).member:
            out.append(ArSystem(R, gs.L, gs.m, gs.p))
    return out


# ---------------------------------------------------------------------------
# identification


def _has_noise(ds: Dataset) -> bool:
    return any(tr.v is not None and np.any(tr.v != 0) for tr in ds.trajectories)


def identify(ds: Dataset, method: str = "operator", N: Optional[int] = None) -> ArSystem:
    """Least-squares system from noise-free data, by the Gram route or the spline route."""
    if _has_noise(ds):
        warnings.warn("dataset carries a nonzero noise record; the result is only a least-squares fit",
                      NoisePresent, stacklevel=2)
    qL = ds.q * ds.L
    if method == "operator":
        gs = build_gram_set(ds)
        ev = np.linalg.eigvalsh(gs.HH)
        if not (ev[-1] > 0 and ev[0] > HH_RTOL * ev[-1]):
            raise NotSurjective(f"HH* is singular (eigenvalues {ev[0]:.3e} .. {ev[-1]:.3e})")
        R = center_system(gs)
    elif method == "spline":
        if N is None:
            sweep = splines.level_sweep(ds)
            N, rep = sweep[-1]
            if not rep.surjective:
                raise NotSurjective(f"H_tilde is rank deficient up to level {N} (sigma_min {rep.sigma_min:.3e})")
        sa = splines.build_spline_approx(ds, N)
        rep = splines.rank_test(sa, qL)
        if not rep.surjective:
            raise NotSurjective(f"H_tilde at level {N} has sigma_min {rep.sigma_min:.3e}")
        H, Y = sa.H_tilde, sa.Y_tilde
        R = -np.linalg.solve(H @ H.T, H @ Y.T).T
    else:
        raise ValueError(f"unknown identification method {method!r}")
    return ArSystem(R, ds.L, ds.m, ds.p)


def identification_residual(gs: GramSet, sys: ArSystem) -> float:
    """``|(RH + Y_L)(RH + Y_L)^*|_F`` relative to ``1 + |Y_L Y_L^*|_F``."""
    R = sys.R
    Q = R @ gs.HH @ R.T + R @ gs.YLH.T + gs.YLH @ R.T + gs.YLYL
    return float(np.linalg.norm(Q) / (1.0 + np.linalg.norm(gs.YLYL)))
