"""AR systems, AR controllers and closed-loop stability.

An AR system of order ``L`` is ``y^(L) + R [u; y; u'; y'; ...] = v`` and a
controller is ``u^(L) + C [u; y; ...] = 0``.  Interconnecting them gives the
monic ``q x q`` polynomial matrix ``G(xi) = I xi^L + sum_l G_l xi^l`` with
``G_l = [[C_ul, C_yl], [R_ul, R_yl]]``.

Stability is decided two ways: eigenvalues of the companion matrix (the
oracle) and the Lyapunov LMI ``Psi > 0``, ``M^T Psi + Psi M > 0`` with
``M = [-J; C; R]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from . import sdp
from .errors import DimensionMismatch, SolverError


class _BlockRow:
    """Shared layout ``[X_u0 X_y0 X_u1 X_y1 ... X_u,L-1 X_y,L-1]``."""

    kind = "block_row"
    rows_attr = "p"

    def __init__(self, matrix, L: int, m: int, p: int):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        rows = p if self.rows_attr == "p" else m
        if M.shape != (rows, (m + p) * L):
            raise DimensionMismatch(
                f"{self.kind} matrix must be {rows}x{(m + p) * L}, got {M.shape}"
            )
        M.setflags(write=False)
        self._M = M
        self.L, self.m, self.p = int(L), int(m), int(p)

    @property
    def q(self):
        return self.m + self.p

    def u_block(self, ell: int) -> np.ndarray:
        q = self.q
        return self._M[:, ell * q: ell * q + self.m]

    def y_block(self, ell: int) -> np.ndarray:
        q = self.q
        return self._M[:, ell * q + self.m: (ell + 1) * q]

    @classmethod
    def from_blocks(cls, u_blocks, y_blocks):
        u_blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in u_blocks]
        y_blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in y_blocks]
        if len(u_blocks) != len(y_blocks):
            raise DimensionMismatch("need as many u-blocks as y-blocks")
        L = len(u_blocks)
        m = u_blocks[0].shape[1]
        p = y_blocks[0].shape[1]
        M = np.hstack([np.hstack([bu, by]) for bu, by in zip(u_blocks, y_blocks)])
        return cls(M, L, m, p)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "L": self.L,
            "m": self.m,
            "p": self.p,
            "blocks": [
                {"ell": ell, "u": self.u_block(ell).tolist(), "y": self.y_block(ell).tolist()}
                for ell in range(self.L)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict):
        L, m, p = int(d["L"]), int(d["m"]), int(d["p"])
        blocks = sorted(d["blocks"], key=lambda b: b["ell"])
        if len(blocks) != L:
            raise DimensionMismatch(f"expected {L} blocks, got {len(blocks)}")
        rows = p if cls.rows_attr == "p" else m
        us = [np.array(b["u"], dtype=float).reshape(rows, m) for b in blocks]
        ys = [np.array(b["y"], dtype=float).reshape(rows, p) for b in blocks]
        M = np.hstack([np.hstack([bu, by]) for bu, by in zip(us, ys)])
        return cls(M, L, m, p)

    def save(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self):
        return f"{type(self).__name__}(L={self.L}, m={self.m}, p={self.p})"


class ArSystem(_BlockRow):
    kind = "system"
    rows_attr = "p"

    @property
    def R(self) -> np.ndarray:
        return self._M


class Controller(_BlockRow):
    kind = "controller"
    rows_attr = "m"

    @property
    def C(self) -> np.ndarray:
        return self._M

    @classmethod
    def zero(cls, L, m, p):
        return cls(np.zeros((m, (m + p) * L)), L, m, p)


def shift_matrix(q: int, L: int) -> np.ndarray:
    """``J_{q(L-1)} = [0_{q(L-1) x q}, I_{q(L-1)}]``."""
    J = np.zeros((q * (L - 1), q * L))
    J[:, q:] = np.eye(q * (L - 1))
    return J


def companion(Gtilde: np.ndarray, q: int, L: int) -> np.ndarray:
    return np.vstack([shift_matrix(q, L), -Gtilde])


@dataclass(frozen=True)
class ClosedLoop:
    G_coeffs: np.ndarray  # (L, q, q)
    A: np.ndarray         # (qL, qL)
    L: int
    q: int

    @property
    def Gtilde(self) -> np.ndarray:
        return np.hstack(list(self.G_coeffs))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def spectral_abscissa(self) -> float:
        return float(np.max(self.eigenvalues().real))


def close_loop(sys: ArSystem, ctrl: Controller) -> ClosedLoop:
    if (sys.L, sys.m, sys.p) != (ctrl.L, ctrl.m, ctrl.p):
        raise DimensionMismatch(
            f"system (L, m, p) = {(sys.L, sys.m, sys.p)} vs controller {(ctrl.L, ctrl.m, ctrl.p)}"
        )
    L, q = sys.L, sys.q
    Gt = np.vstack([ctrl.C, sys.R])
    G = Gt.reshape(q, L, q).transpose(1, 0, 2).copy()
    return ClosedLoop(G, companion(Gt, q, L), L, q)


def closed_loop_from_poly(G_coeffs) -> ClosedLoop:
    """Closed loop of an arbitrary monic polynomial matrix ``I xi^L + sum G_l xi^l``."""
    G = np.asarray(G_coeffs, dtype=float)
    L, q, _ = G.shape
    Gt = np.hstack(list(G))
    return ClosedLoop(G, companion(Gt, q, L), L, q)


def is_hurwitz(cl: ClosedLoop, margin: float = 0.0) -> bool:
    ev = cl.eigenvalues()
    if not np.all(np.isfinite(ev)):
        raise np.linalg.LinAlgError("eigenvalue computation did not converge")
    return bool(np.max(ev.real) < -margin)


def lyapunov_operand(sys: ArSystem, ctrl: Controller) -> np.ndarray:
    """``M = [-J_{q(L-1)}; C; R]``, which equals ``-A`` for the companion ``A``."""
    return np.vstack([-shift_matrix(sys.q, sys.L), ctrl.C, sys.R])


def lyapunov_problem(M: np.ndarray) -> sdp.SdpProblem:
    """Margin form of the Lyapunov LMI with the scale fixed by ``Psi <= I``.

    Variables are the upper-triangle entries of ``Psi``.  The first two
    blocks carry the margin; the normalization block does not.
    """
    n = M.shape[0]
    basis = sdp.sym_basis(n)
    lyap = np.einsum("ji,kjl->kil", M, basis) + np.einsum("kij,jl->kil", basis, M)
    zero = np.zeros((n, n))
    return sdp.SdpProblem(
        nvars=basis.shape[0],
        blocks=[
            sdp.LmiBlock(zero, basis, name="Psi"),
            sdp.LmiBlock(zero, lyap, name="MtPsi+PsiM"),
            sdp.LmiBlock(np.eye(n), -basis, name="I-Psi", margin=False),
        ],
    )


@dataclass(frozen=True)
class LyapunovResult:
    stable: bool
    Psi: Optional[np.ndarray]
    psi_margin: float
    lyap_margin: float
    result: sdp.FeasibilityResult


def lyapunov_check_operand(M, solver=None, eps: float = 1e-9) -> LyapunovResult:
    """Solve the Lyapunov LMI for ``M = -A``.

    ``M`` is first balanced by a diagonal similarity ``T^-1 M T`` (which keeps
    both stability and LMI feasibility); the LMI is solved for the balanced
    matrix and ``Psi`` is mapped back by ``T^-T Psi' T^-1``.
    ``stable`` holds iff the best margin is at least ``eps`` and the returned
    ``Psi'`` passes both strict inequalities under an eigenvalue re-check.
    """
    M = np.asarray(M, dtype=float)
    Mb, (scale, _) = scipy.linalg.matrix_balance(M, permute=False, separate=True)
    Mb = Mb / max(1.0, float(np.abs(Mb).max()))
    prob = lyapunov_problem(Mb)
    res = sdp.solve(prob, solver=solver, eps=eps)
    if res.status is sdp.Status.UNKNOWN and res.y is None:
        raise SolverError(f"solver failed on the Lyapunov LMI: {res.solver_status}")
    Psi = None
    pm = lm = float("nan")
    if res.y is not None:
        Pb = sdp.unpack_sym(res.y, M.shape[0])
        pm = float(np.linalg.eigvalsh(Pb).min())
        lm = float(np.linalg.eigvalsh(Mb.T @ Pb + Pb @ Mb).min())
    stable = res.status is sdp.Status.FEASIBLE and pm > 0 and lm > 0
    if stable:
        Psi = Pb / scale[:, None] / scale[None, :]
        Psi = Psi / np.trace(Psi)
        pm = float(np.linalg.eigvalsh(Psi).min())
        lm = float(np.linalg.eigvalsh(M.T @ Psi + Psi @ M).min())
    return LyapunovResult(stable, Psi, pm, lm, res)


def lyapunov_lmi_check(sys: ArSystem, ctrl: Controller, solver=None, eps: float = 1e-9) -> LyapunovResult:
    """Decide closed-loop stability of ``(sys, ctrl)`` by the Lyapunov LMI."""
    return lyapunov_check_operand(lyapunov_operand(sys, ctrl), solver=solver, eps=eps)


def shift_polynomial(G_coeffs, alpha: float) -> np.ndarray:
    """Coefficients of ``G(xi + alpha)``; eigenvalues of the companion move by ``-alpha``."""
    G = np.asarray(G_coeffs, dtype=float)
    L, q, _ = G.shape
    full = np.concatenate([G, np.eye(q)[None]], axis=0)  # degrees 0..L
    out = np.zeros_like(full)
    for k in range(L + 1):
        for i in range(k + 1):
            out[i] += comb(k, i) * alpha ** (k - i) * full[k]
    return out[:L]
