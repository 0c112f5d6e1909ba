"""Simulation of AR systems with process noise, and the cart-pendulum scenario.

The AR equation ``y^(L) + sum_l (R_ul u^(l) + R_yl y^(l)) = v`` is integrated
in companion form with fixed-step RK4.  White noise with
``E[v(t) v(s)^T] = delta(t - s) sigma^2 I`` is emulated by a piecewise
constant signal holding an ``N(0, sigma^2 / dt)`` draw over each step.  The
noise stored on a trajectory is the cell average of that signal over
``[t_i - h/2, t_i + h/2]`` on the output grid, which keeps the integral of the
noise against smooth test functions.

Seeds: attempt ``a`` of a scenario with seed ``s`` draws everything (initial
state, input, noise) from ``numpy.random.default_rng([s, a])``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import LowAcceptanceRate, SimulationBlowUp
from .signals import Dataset, Trajectory
from .stability import ArSystem, Controller, close_loop


@dataclass(frozen=True)
class PendulumParams:
    M_c: float = 0.6
    M_p: float = 0.3
    mu_c: float = 0.1
    mu_p: float = 0.0003
    r: float = 0.5
    J_m: float = 0.025
    g: float = 9.81

    @property
    def mass_matrix(self) -> np.ndarray:
        return np.array([
            [self.M_c + self.M_p, self.M_p * self.r],
            [self.M_p * self.r, self.J_m + self.M_p * self.r ** 2],
        ])


@dataclass(frozen=True)
class SimConfig:
    """Integration and sampling settings.

    ``noise_sigma`` is the white-noise intensity ``sigma`` (the covariance
    scale is ``sigma**2``).  ``validity`` optionally bounds ``|y_i(t)|`` per
    output; ``inf`` disables a channel.
    """

    dt: float = 1e-4
    tau: float = 0.5
    n_out: int = 501
    noise_sigma: float = 0.0
    seed: int = 0
    validity: Optional[tuple] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        stride = self.tau / (self.n_out - 1) / self.dt
        if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
            raise ValueError("output grid must be a subgrid of the integration grid")

    @property
    def stride(self) -> int:
        return int(round(self.tau / (self.n_out - 1) / self.dt))

    @property
    def n_steps(self) -> int:
        return self.stride * (self.n_out - 1)


class SumOfSines:
    """``u(t) = sum_i c_i sin(2 pi omega_i t)``; ``c`` has shape (terms, m)."""

    def __init__(self, coeffs, freqs):
        c = np.asarray(coeffs, dtype=float)
        self.c = c.reshape(c.shape[0], -1)
        self.omega = np.asarray(freqs, dtype=float).reshape(-1)
        self.m = self.c.shape[1]

    def derivatives(self, t, order: int) -> np.ndarray:
        """``(order+1, len(t), m)``: ``u, u', ..., u^(order)`` at ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        a = 2 * pi * self.omega
        out = np.empty((order + 1, t.size, self.m))
        phase = np.outer(t, a)
        for k in range(order + 1):
            s = np.sin(phase + k * pi / 2) * a ** k
            out[k] = s @ self.c
        return out


class ZeroInput:
    def __init__(self, m: int):
        self.m = m

    def derivatives(self, t, order: int) -> np.ndarray:
        t = np.atleast_1d(t)
        return np.zeros((order + 1, t.size, self.m))


def pendulum_ar(params: PendulumParams = PendulumParams()) -> ArSystem:
    """Linearized cart-pendulum about the upright equilibrium as an L=2 AR system.

    ``Mass [x''; th''] + diag(mu_c, mu_p) [x'; th'] - diag(0, M_p g r) [x; th] = [u; 0]``
    multiplied through by the inverse mass matrix; outputs ``y = [x, theta]``.
    """
    Mass = params.mass_matrix
    if np.linalg.eigvalsh(Mass).min() <= 0:
        raise np.linalg.LinAlgError("mass matrix is not positive definite")
    Minv = np.linalg.inv(Mass)
    damping = np.diag([params.mu_c, params.mu_p])
    stiffness = np.diag([0.0, -params.M_p * params.g * params.r])
    Ry1 = Minv @ damping
    Ry0 = Minv @ stiffness
    Ru0 = -Minv @ np.array([[1.0], [0.0]])
    return ArSystem.from_blocks([Ru0, np.zeros((2, 1))], [Ry0, Ry1])


def _output_companion(sys: ArSystem):
    p, L = sys.p, sys.L
    A = np.zeros((p * L, p * L))
    A[: p * (L - 1), p:] = np.eye(p * (L - 1))
    for ell in range(L):
        A[p * (L - 1):, ell * p:(ell + 1) * p] = -sys.y_block(ell)
    return A


def _cell_average(v_fine: np.ndarray, dt: float, t_out: np.ndarray) -> np.ndarray:
    """Average of the step-held noise over ``[t_i - h/2, t_i + h/2]`` clipped to the grid."""
    # v_fine: (B, n_steps, p); cumulative integral is piecewise linear
    B, n, p = v_fine.shape
    V = np.concatenate([np.zeros((B, 1, p)), np.cumsum(v_fine, axis=1) * dt], axis=1)
    tf = np.arange(n + 1) * dt
    h = t_out[1] - t_out[0]
    a = np.clip(t_out - h / 2, 0.0, tf[-1])
    b = np.clip(t_out + h / 2, 0.0, tf[-1])

    def interp(s):
        idx = np.minimum((s / dt).astype(int), n - 1)
        frac = (s - tf[idx]) / dt
        return V[:, idx] + frac[None, :, None] * (V[:, idx + 1] - V[:, idx])

    return (interp(b) - interp(a)) / (b - a)[None, :, None]


def simulate_batch(sys: ArSystem, inputs: Sequence, x0, cfg: SimConfig, rngs=None):
    """Integrate several trajectories at once.

    Returns ``(t_out, u_out, y_out, v_out, ymax)`` where ``ymax`` holds the
    running ``max |y|`` over the integration grid, per trajectory and output.
    """
    B = len(inputs)
    p, L, m = sys.p, sys.L, sys.m
    x = np.array(x0, dtype=float).reshape(B, p * L)
    A = _output_companion(sys)
    dt, ns, stride = cfg.dt, cfg.n_steps, cfg.stride
    tf = np.arange(ns + 1) * dt
    th = tf[:-1] + dt / 2
    Ru = [sys.u_block(ell) for ell in range(L)]

    def forcing_at(times):
        out = np.zeros((B, times.size, p))
        for b, inp in enumerate(inputs):
            d = inp.derivatives(times, L - 1)
            for ell in range(L):
                out[b] -= d[ell] @ Ru[ell].T
        return out

    f_node = forcing_at(tf)
    f_half = forcing_at(th)
    sigma = cfg.noise_sigma
    if sigma > 0:
        if rngs is None:
            rngs = [np.random.default_rng([cfg.seed, b]) for b in range(B)]
        v = np.stack([r.standard_normal((ns, p)) for r in rngs]) * (sigma / np.sqrt(dt))
    else:
        v = np.zeros((B, ns, p))
    t_out = tf[::stride]
    y_out = np.empty((B, t_out.size, p))
    y_out[:, 0] = x[:, :p]
    ymax = np.abs(x[:, :p])
    k_top = p * (L - 1)

    def rhs(state, force):
        d = state @ A.T
        d[:, k_top:] += force
        return d

    for k in range(ns):
        fa = f_node[:, k] + v[:, k]
        fm = f_half[:, k] + v[:, k]
        fb = f_node[:, k + 1] + v[:, k]
        k1 = rhs(x, fa)
        k2 = rhs(x + 0.5 * dt * k1, fm)
        k3 = rhs(x + 0.5 * dt * k2, fm)
        k4 = rhs(x + dt * k3, fb)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationBlowUp(f"non-finite state at t={tf[k + 1]:.6g}", time=float(tf[k + 1]))
        np.maximum(ymax, np.abs(x[:, :p]), out=ymax)
        if (k + 1) % stride == 0:
            y_out[:, (k + 1) // stride] = x[:, :p]
    u_out = np.stack([inp.derivatives(t_out, 0)[0] for inp in inputs])
    v_out = _cell_average(v, dt, t_out) if sigma > 0 else None
    return t_out, u_out, y_out, v_out, ymax


def simulate_ar(sys: ArSystem, u, x0, cfg: SimConfig, rng=None) -> Trajectory:
    """One trajectory; ``x0`` is the stack ``[y(0), y'(0), ..., y^(L-1)(0)]``."""
    u = u if u is not None else ZeroInput(sys.m)
    rngs = [rng] if rng is not None else None
    t, us, ys, vs, _ = simulate_batch(sys, [u], [x0], cfg, rngs)
    return Trajectory(t, us[0], ys[0], None if vs is None else vs[0])


@dataclass
class PendulumDataset:
    dataset: Dataset
    accepted_attempts: list
    attempts: int
    seed: int
    truth: ArSystem
    inputs: list = field(default_factory=list)


def _pendulum_draw(rng):
    x0 = np.concatenate([rng.uniform(-0.1, 0.1, 1), rng.uniform(-0.01, 0.01, 1),
                         rng.uniform(-0.1, 0.1, 1), rng.uniform(-0.01, 0.01, 1)])
    # state stack is [x, theta, x', theta']
    c = rng.uniform(-0.2, 0.2, 5)
    w = rng.uniform(0.0, 10.0, 5)
    return x0, SumOfSines(c, w)


def generate_pendulum_dataset(params: PendulumParams = PendulumParams(),
                              cfg: SimConfig = SimConfig(noise_sigma=1e-2, validity=(np.inf, 0.1)),
                              K_target: int = 25, *, max_attempts: int = 10_000,
                              min_rate: float = 0.01, batch: int = 32) -> PendulumDataset:
    sys = pendulum_ar(params)
    bound = np.array(cfg.validity if cfg.validity is not None else (np.inf, np.inf), dtype=float)
    keep, accepted, inputs = [], [], []
    attempt = 0
    while len(keep) < K_target:
        if attempt >= max_attempts:
            raise LowAcceptanceRate(
                f"only {len(keep)} of {attempt} attempts were valid (need {K_target})"
            )
        nb = min(batch, max_attempts - attempt)
        idx = list(range(attempt, attempt + nb))
        rngs = [np.random.default_rng([cfg.seed, a]) for a in idx]
        draws = [_pendulum_draw(r) for r in rngs]
        t, us, ys, vs, ymax = simulate_batch(sys, [d[1] for d in draws],
                                             [d[0] for d in draws], cfg, rngs)
        for b, a in enumerate(idx):
            if len(keep) >= K_target:
                break
            if np.all(ymax[b] <= bound):
                keep.append(Trajectory(t, us[b], ys[b], None if vs is None else vs[b]))
                accepted.append(a)
                inputs.append(draws[b][1])
        attempt += nb
        if attempt >= max_attempts and len(keep) / attempt < min_rate:
            raise LowAcceptanceRate(f"acceptance rate {len(keep) / attempt:.3%} over {attempt} attempts")
    ds = Dataset(tuple(keep), L=2, m=1, p=2)
    return PendulumDataset(ds, accepted, attempt, cfg.seed, sys, inputs)


@dataclass(frozen=True)
class DecayReport:
    ratio: float
    rate: float
    blew_up: bool
    t_end: float


def simulate_closed_loop(sys: ArSystem, ctrl: Controller, w0, horizon: float = 5.0,
                         dt: float = 1e-3) -> DecayReport:
    """Integrate ``w' = A w`` for the closed-loop companion matrix ``A``.

    ``rate`` is the least-squares slope of ``log |w(t)|`` over the second
    half of the horizon (negative means decay).
    """
    A = close_loop(sys, ctrl).A
    w0 = np.asarray(w0, dtype=float).reshape(-1)
    n0 = np.linalg.norm(w0)
    if n0 == 0:
        return DecayReport(0.0, float("-inf"), False, horizon)
    step = scipy.linalg.expm(A * dt)
    n = int(round(horizon / dt))
    w = w0.copy()
    norms = np.empty(n + 1)
    norms[0] = n0
    for k in range(n):
        w = step @ w
        norms[k + 1] = np.linalg.norm(w)
        if not np.isfinite(norms[k + 1]) or norms[k + 1] > 1e12 * n0:
            return DecayReport(float("inf"), float("inf"), True, (k + 1) * dt)
    t = np.arange(n + 1) * dt
    half = slice(n // 2, None)
    with np.errstate(divide="ignore"):
        logs = np.log(np.maximum(norms[half], 1e-300))
    rate = float(np.polyfit(t[half], logs, 1)[0])
    return DecayReport(float(norms[-1] / n0), rate, False, horizon)
