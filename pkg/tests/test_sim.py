import numpy as np
import pytest

from synthop import gram, informativity as inf, sim, stability as stb
from synthop.errors import LowAcceptanceRate
from synthop.stability import ArSystem, Controller

# u'' + 49 u' + 1511 u = 3335 x' + 552 x + 9656 th' + 34715 th
REFERENCE_CTRL = Controller.from_blocks([[[1511.0]], [[49.0]]],
                                    [[[-552.0, -34715.0]], [[-3335.0, -9656.0]]])


def test_frictionless_has_no_damping():
    s = sim.pendulum_ar(sim.PendulumParams(mu_c=0.0, mu_p=0.0))
    np.testing.assert_array_equal(s.y_block(1), 0.0)


def test_pendulum_entries_hand_inverse():
    P = sim.PendulumParams()
    a, b, d = P.M_c + P.M_p, P.M_p * P.r, P.J_m + P.M_p * P.r ** 2
    det = a * d - b * b
    inv = np.array([[d, -b], [-b, a]]) / det
    s = sim.pendulum_ar(P)
    np.testing.assert_allclose(s.y_block(1), inv * [P.mu_c, P.mu_p], rtol=1e-14)
    np.testing.assert_allclose(s.y_block(0), inv @ np.diag([0, -P.M_p * P.g * P.r]), rtol=1e-14, atol=1e-16)
    np.testing.assert_allclose(s.u_block(0)[:, 0], -inv[:, 0], rtol=1e-14)
    np.testing.assert_array_equal(s.u_block(1), 0.0)
    # upright equilibrium: one unstable open-loop mode
    ev = stb.close_loop(s, Controller.zero(2, 1, 2)).eigenvalues()
    assert ev.real.max() == pytest.approx(4.41, abs=0.01)


def test_reference_controller_sign_convention():
    P = sim.PendulumParams()
    upright = sim.pendulum_ar(P)
    assert stb.close_loop(upright, REFERENCE_CTRL).spectral_abscissa() < 0
    # hanging configuration: the same plant with the stiffness sign flipped
    R = upright.R.copy()
    Minv = np.linalg.inv(P.mass_matrix)
    flipped = ArSystem.from_blocks([upright.u_block(0), upright.u_block(1)],
                                   [Minv @ np.diag([0, P.M_p * P.g * P.r]), upright.y_block(1)])
    assert stb.close_loop(flipped, REFERENCE_CTRL).spectral_abscissa() > 0
    assert not np.array_equal(R, flipped.R)


def test_exponential_decay():
    s = ArSystem([[0.0, 1.0]], 1, 1, 1)
    cfg = sim.SimConfig(dt=1e-4, tau=1.0, n_out=101)
    tr = sim.simulate_ar(s, sim.ZeroInput(1), [1.0], cfg)
    np.testing.assert_allclose(tr.y[:, 0], np.exp(-tr.t), atol=1e-6)
    assert tr.v is None


def test_zero_everything():
    s = ArSystem(np.zeros((2, 6)), 2, 1, 2)
    tr = sim.simulate_ar(s, sim.ZeroInput(1), np.zeros(4), sim.SimConfig())
    np.testing.assert_array_equal(tr.y, 0.0)
    np.testing.assert_array_equal(tr.u, 0.0)


def _rk4_error(dt):
    # y' + y = u with u = sin(2 pi t); exact solution via variation of constants
    s = ArSystem([[-1.0, 1.0]], 1, 1, 1)
    u = sim.SumOfSines([1.0], [1.0])
    cfg = sim.SimConfig(dt=dt, tau=1.0, n_out=11)
    tr = sim.simulate_ar(s, u, [0.5], cfg)
    a = 2 * np.pi
    t = tr.t
    exact = (np.sin(a * t) - a * np.cos(a * t) + a * np.exp(-t)) / (1 + a ** 2) + 0.5 * np.exp(-t)
    return np.abs(tr.y[:, 0] - exact).max()


def test_rk4_order():
    e1, e2 = _rk4_error(1e-2), _rk4_error(5e-3)
    print("RK4 errors", e1, e2, e1 / e2)
    assert 12 <= e1 / e2 <= 20


def test_open_loop_theta_grows():
    s = sim.pendulum_ar()
    cfg = sim.SimConfig(tau=2.0, n_out=201, dt=1e-3)
    tr = sim.simulate_ar(s, sim.ZeroInput(1), [0.0, 1e-3, 0.0, 0.0], cfg)
    assert abs(tr.y[-1, 1]) > 100 * 1e-3


def test_dataset_protocol(pendulum_noisy):
    pd = pendulum_noisy
    assert pd.dataset.K == 25
    assert len(pd.accepted_attempts) == 25
    assert pd.attempts >= 25
    for tr in pd.dataset.trajectories:
        assert tr.n == 501
        assert tr.tau == pytest.approx(0.5)
        assert np.abs(tr.y[:, 1]).max() <= 0.1
        assert tr.v is not None


def test_dataset_deterministic():
    cfg = sim.SimConfig(noise_sigma=1e-2, seed=42, validity=(np.inf, 0.1))
    a = sim.generate_pendulum_dataset(sim.PendulumParams(), cfg, 3)
    b = sim.generate_pendulum_dataset(sim.PendulumParams(), cfg, 3)
    assert a.accepted_attempts == b.accepted_attempts
    for x, y in zip(a.dataset.trajectories, b.dataset.trajectories):
        np.testing.assert_array_equal(x.y, y.y)
        np.testing.assert_array_equal(x.v, y.v)


def test_zero_validity_bound():
    cfg = sim.SimConfig(noise_sigma=0.0, seed=0, validity=(0.0, 0.0))
    with pytest.raises(LowAcceptanceRate):
        sim.generate_pendulum_dataset(sim.PendulumParams(), cfg, 25, max_attempts=200)


def test_noise_free_consistency(pendulum_clean):
    gs = gram.build_gram_set(pendulum_clean.dataset)
    assert inf.consistency_test(gram.build_pi(gs, 0.0), pendulum_clean.truth).member
    assert not np.any(gs.V0V0)


def test_identify_recovers_pendulum(pendulum_clean):
    R = inf.identify(pendulum_clean.dataset)
    truth = pendulum_clean.truth.R
    assert np.linalg.norm(R.R - truth) / np.linalg.norm(truth) <= 1e-4


def test_noise_calibration():
    # cell-averaged white noise: integral of v over [0, tau] has variance sigma^2 tau
    cfg = sim.SimConfig(noise_sigma=0.3, seed=0, tau=1.0, n_out=101, dt=1e-3)
    s = ArSystem([[0.0, 1.0]], 1, 1, 1)
    vals = []
    for k in range(300):
        tr = sim.simulate_ar(s, sim.ZeroInput(1), [0.0], cfg, rng=np.random.default_rng(k))
        vals.append(np.sum(tr.v[1:-1, 0]) * tr.h + 0.5 * tr.h * (tr.v[0, 0] + tr.v[-1, 0]))
    assert np.var(vals) == pytest.approx(0.09, rel=0.2)


def test_closed_loop_decay(pendulum_noisy):
    s = pendulum_noisy.truth
    w0 = [0.0, 0.01, 0.0, 0.01, 0.0, 0.0]
    for ctrl in (REFERENCE_CTRL, inf.design_controller(pendulum_noisy.dataset, 1e-6 * np.eye(2)).controller):
        alpha = stb.close_loop(s, ctrl).spectral_abscissa()
        rep = sim.simulate_closed_loop(s, ctrl, w0)
        print("abscissa", alpha, rep)
        assert not rep.blew_up
        assert rep.ratio < 1
        assert rep.rate == pytest.approx(alpha, rel=0.02)
        assert rep.ratio <= 10 * np.exp(alpha * 5.0)
    grow = sim.simulate_closed_loop(s, Controller.zero(2, 1, 2), w0)
    assert grow.blew_up or grow.ratio > 1
    zero = sim.simulate_closed_loop(s, REFERENCE_CTRL, np.zeros(6))
    assert zero.ratio == 0.0
