"""Strict-LMI feasibility problems, solver adapters and SDPA sparse I/O.

A problem is a list of symmetric affine blocks ``F0 + sum_i y_i F_i``.  It is
solved in margin form::

    maximize t  s.t.  F0 + sum_i y_i F_i - t I >= 0  (blocks with margin=True)
                      F0 + sum_i y_i F_i       >= 0  (blocks with margin=False)
                      t <= t_cap

and the result is always re-verified by an eigen-decomposition of every
block at the returned ``y``.

Symmetric matrix unknowns are parameterized by their upper-triangle entries
in row-major order; the basis matrix of an off-diagonal entry ``(i, j)`` is
``E_ij + E_ji``, so each variable equals the matrix entry it stands for.

SDPA sparse (``.dat-s``) files use the SDPA convention
``sum_i x_i F_i - F_0 >= 0``: the constant block is written negated.
"""

from __future__ import annotations

import enum
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import SolverError

RECHECK_RTOL = 1e-7
SOLVER_ENV = "SYNTHOP_SOLVER"
SDPA_COMMAND_ENV = "SYNTHOP_SDPA_COMMAND"


class Status(enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    UNKNOWN = "Unknown"


def sym_basis(n: int) -> np.ndarray:
    """Basis ``(n(n+1)/2, n, n)`` for symmetric matrices, upper triangle row-major."""
    iu = np.triu_indices(n)
    B = np.zeros((iu[0].size, n, n))
    k = np.arange(iu[0].size)
    B[k, iu[0], iu[1]] = 1.0
    B[k, iu[1], iu[0]] = 1.0
    return B


def pack_sym(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return S[np.triu_indices(S.shape[0])]


def unpack_sym(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    S = np.zeros((n, n))
    iu = np.triu_indices(n)
    S[iu] = y[: iu[0].size]
    S.T[iu] = y[: iu[0].size]
    return S


@dataclass
class LmiBlock:
    F0: np.ndarray
    F: np.ndarray    # (nvars, s, s)
    name: str = ""
    margin: bool = True

    def __post_init__(self):
        self.F0 = np.atleast_2d(np.asarray(self.F0, dtype=float))
        s = self.F0.shape[0]
        self.F = np.asarray(self.F, dtype=float).reshape(-1, s, s)
        if self.F0.shape != (s, s):
            raise ValueError(f"block {self.name!r}: F0 must be square")
        if not np.array_equal(self.F0, self.F0.T) or not np.array_equal(self.F, self.F.transpose(0, 2, 1)):
            raise ValueError(f"block {self.name!r}: coefficient matrices must be symmetric")

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, y) -> np.ndarray:
        return self.F0 + np.tensordot(np.asarray(y, dtype=float), self.F, axes=(0, 0))


@dataclass
class SdpProblem:
    nvars: int
    blocks: list
    objective: Optional[np.ndarray] = None   # minimize c.y; None means pure feasibility

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("problem needs at least one block")
        for b in self.blocks:
            if b.F.shape[0] != self.nvars:
                raise ValueError(
                    f"block {b.name!r} has {b.F.shape[0]} coefficient matrices, expected {self.nvars}"
                )
        if self.objective is not None:
            self.objective = np.asarray(self.objective, dtype=float).reshape(self.nvars)

    @property
    def block_sizes(self):
        return [b.size for b in self.blocks]

    def scale(self) -> float:
        return max(1.0, max(float(np.abs(b.F0).max(initial=0.0)) for b in self.blocks))

    def margins(self, y) -> list:
        return [float(np.linalg.eigvalsh(b.evaluate(y)).min()) for b in self.blocks]

    def with_margin_variable(self, t_cap: Optional[float] = None) -> "SdpProblem":
        """Equivalent problem with ``t`` as the last variable and objective ``-t``.

        With ``t_cap`` a 1x1 block ``[t_cap - t] >= 0`` is appended.
        """
        blocks = []
        for b in self.blocks:
            extra = -np.eye(b.size)[None] if b.margin else np.zeros((1, b.size, b.size))
            blocks.append(LmiBlock(b.F0, np.concatenate([b.F, extra]), b.name, False))
        if t_cap is not None:
            Fc = np.zeros((self.nvars + 1, 1, 1))
            Fc[-1] = -1.0
            blocks.append(LmiBlock([[t_cap]], Fc, "t_cap", False))
        c = np.zeros(self.nvars + 1)
        c[-1] = -1.0
        return SdpProblem(self.nvars + 1, blocks, c)


@dataclass
class FeasibilityResult:
    status: Status
    y: Optional[np.ndarray]
    t: Optional[float]
    block_margins: list = field(default_factory=list)
    solver: str = ""
    solver_status: str = ""
    solve_time: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


@dataclass
class AdapterOutput:
    """What an adapter hands back: raw solver status plus ``y`` and ``t`` if available."""

    ok: bool
    infeasible: bool
    y: Optional[np.ndarray]
    t: Optional[float]
    status: str
    name: str


# ---------------------------------------------------------------------------
# adapters


class CvxpyAdapter:
    """Native conic solve through cvxpy (Clarabel by default)."""

    def __init__(self, solver: str = "CLARABEL", **options):
        self.solver = solver.upper()
        self.options = options

    @property
    def name(self):
        return f"cvxpy/{self.solver}"

    def __call__(self, prob: SdpProblem, t_cap: float) -> AdapterOutput:
        import cvxpy as cp

        y = cp.Variable(prob.nvars)
        t = cp.Variable()
        cons = [t <= t_cap]
        for b in prob.blocks:
            s = b.size
            Fm = b.F.reshape(prob.nvars, s * s).T
            X = b.F0 + cp.reshape(Fm @ y, (s, s), order="C")
            X = 0.5 * (X + X.T)
            cons.append((X - t * np.eye(s) if b.margin else X) >> 0)
        if prob.objective is None:
            objective = cp.Maximize(t)
        else:
            objective = cp.Minimize(prob.objective @ y)
            cons.append(t == 0)
        problem = cp.Problem(objective, cons)
        try:
            problem.solve(solver=self.solver, **self.options)
        except cp.error.SolverError as exc:
            return AdapterOutput(False, False, None, None, f"error: {exc}", self.name)
        status = problem.status
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and y.value is not None:
            return AdapterOutput(True, False, np.asarray(y.value, dtype=float).reshape(-1),
                                 float(t.value), status, self.name)
        return AdapterOutput(False, status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE),
                             None, None, status, self.name)


class SdpaSubprocessAdapter:
    """Drive an external solver that reads SDPA sparse input.

    The command is invoked as ``<command> problem.dat-s solution.sol`` and
    the first line of the solution file must hold the ``y`` vector (the CSDP
    convention).  Exit code 0 means solved, anything else unsolved.
    """

    def __init__(self, command: Optional[str] = None, timeout: float = 600.0):
        command = command or os.environ.get(SDPA_COMMAND_ENV)
        if not command:
            raise SolverError(f"no SDPA solver command given (set {SDPA_COMMAND_ENV})")
        self.command = shlex.split(command)
        self.timeout = timeout

    @property
    def name(self):
        return f"sdpa-subprocess/{Path(self.command[0]).name}"

    def __call__(self, prob: SdpProblem, t_cap: float) -> AdapterOutput:
        lifted = prob.with_margin_variable(t_cap) if prob.objective is None else prob
        with tempfile.TemporaryDirectory() as tmp:
            src = Path(tmp) / "problem.dat-s"
            sol = Path(tmp) / "solution.sol"
            export_sdpa(lifted, src)
            try:
                proc = subprocess.run(self.command + [str(src), str(sol)],
                                      capture_output=True, text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise SolverError(f"cannot run {self.command[0]}: {exc}") from exc
            if proc.returncode != 0 or not sol.exists():
                return AdapterOutput(False, proc.returncode in (1, 2), None, None,
                                     f"exit code {proc.returncode}", self.name)
            first = sol.read_text().strip().splitlines()[0]
            yy = np.array([float(x) for x in first.replace(",", " ").split()])
        if yy.size != lifted.nvars:
            return AdapterOutput(False, False, None, None, "malformed solution", self.name)
        if prob.objective is None:
            return AdapterOutput(True, False, yy[:-1], float(yy[-1]), "solved", self.name)
        return AdapterOutput(True, False, yy, 0.0, "solved", self.name)


def get_adapter(solver=None) -> Callable:
    """Resolve a solver spec: an adapter instance, a name, or ``None`` (env or default)."""
    if callable(solver):
        return solver
    name = solver or os.environ.get(SOLVER_ENV) or "clarabel"
    lname = name.lower()
    if lname.startswith("sdpa"):
        _, _, cmd = name.partition(":")
        return SdpaSubprocessAdapter(cmd or None)
    if lname in ("clarabel", "scs", "cvxopt"):
        return CvxpyAdapter(lname)
    raise SolverError(f"unknown solver {name!r}")


def solve(prob: SdpProblem, solver=None, eps: float = 0.0, t_cap: float = 1.0) -> FeasibilityResult:
    """Solve in margin form and re-verify the answer.

    ``Feasible`` requires ``t* >= eps`` and a nonnegative minimum eigenvalue
    at ``y`` for every block that carries the margin.  Blocks without margin
    (normalizations that are active at the optimum) may dip to
    ``-1e-7 * scale``.  A claimed solution failing these re-checks is
    ``Unknown``.
    """
    adapter = get_adapter(solver)
    start = time.perf_counter()
    out = adapter(prob, t_cap)
    elapsed = time.perf_counter() - start
    name = getattr(adapter, "name", type(adapter).__name__)
    if not out.ok:
        status = Status.INFEASIBLE if out.infeasible else Status.UNKNOWN
        return FeasibilityResult(status, None, None, [], name, out.status, elapsed)
    margins = prob.margins(out.y)
    slack = RECHECK_RTOL * prob.scale()
    passed = all(mg >= (0.0 if b.margin else -slack) for b, mg in zip(prob.blocks, margins))
    if prob.objective is None and out.t < eps:
        status = Status.INFEASIBLE
    elif passed:
        status = Status.FEASIBLE
    else:
        status = Status.UNKNOWN
    return FeasibilityResult(status, out.y, out.t, margins, name, out.status, elapsed)


# ---------------------------------------------------------------------------
# SDPA sparse format


def _fmt(x: float) -> str:
    return f"{x + 0.0:.17g}"


def export_sdpa(prob: SdpProblem, path) -> Path:
    path = Path(path)
    c = prob.objective if prob.objective is not None else np.zeros(prob.nvars)
    lines = [
        str(prob.nvars),
        str(len(prob.blocks)),
        " ".join(str(s) for s in prob.block_sizes),
        " ".join(_fmt(x) for x in c),
    ]
    for matno in range(prob.nvars + 1):
        for bno, b in enumerate(prob.blocks, start=1):
            M = -b.F0 if matno == 0 else b.F[matno - 1]
            ii, jj = np.triu_indices(b.size)
            vals = M[ii, jj]
            for i, j, v in zip(ii[vals != 0], jj[vals != 0], vals[vals != 0]):
                lines.append(f"{matno} {bno} {i + 1} {j + 1} {_fmt(v)}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def _tokens(line: str):
    for ch in ",{}()":
        line = line.replace(ch, " ")
    return line.split()


def parse_sdpa(path) -> SdpProblem:
    text = Path(path).read_text(encoding="ascii").splitlines()
    body = [ln for ln in text if ln.strip() and ln.lstrip()[0] not in '"*']
    nvars = int(_tokens(body[0])[0])
    nblocks = int(_tokens(body[1])[0])
    sizes = [abs(int(x)) for x in _tokens(body[2])[:nblocks]]
    c = np.array([float(x) for x in _tokens(body[3])[:nvars]])
    F0 = [np.zeros((s, s)) for s in sizes]
    F = [np.zeros((nvars, s, s)) for s in sizes]
    for ln in body[4:]:
        tok = _tokens(ln)
        matno, bno, i, j = (int(x) for x in tok[:4])
        v = float(tok[4])
        target = F0[bno - 1] if matno == 0 else F[bno - 1][matno - 1]
        val = -v if matno == 0 else v
        target[i - 1, j - 1] = val
        target[j - 1, i - 1] = val
    blocks = [LmiBlock(F0[k], F[k], name=f"block{k + 1}") for k in range(nblocks)]
    return SdpProblem(nvars, blocks, None if not np.any(c) else c)
