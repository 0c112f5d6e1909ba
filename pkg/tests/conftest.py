import numpy as np
import pytest

from synthop import sim
from synthop.signals import Dataset
from synthop.stability import ArSystem


def scalar_dataset(R, K=2, seed=0, sigma=0.0, n_out=501, tau=1.0):
    """Noise-free (or noisy) data from a scalar L=1 plant ``y' + R [u; y] = v``."""
    sys_ = ArSystem(np.atleast_2d(R), 1, 1, 1)
    cfg = sim.SimConfig(dt=tau / (n_out - 1) / 10, tau=tau, n_out=n_out, noise_sigma=sigma, seed=seed)
    rng = np.random.default_rng(seed)
    trajs = []
    for k in range(K):
        u = sim.SumOfSines(rng.uniform(-1, 1, 3), rng.uniform(0.2, 2.0, 3))
        x0 = rng.uniform(-1, 1, 1)
        trajs.append(sim.simulate_ar(sys_, u, x0, cfg, rng=np.random.default_rng([seed, k])))
    return Dataset(tuple(trajs), L=1, m=1, p=1), sys_


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture(scope="session")
def pendulum_noisy():
    cfg = sim.SimConfig(noise_sigma=1e-2, seed=0, validity=(np.inf, 0.1))
    return sim.generate_pendulum_dataset(sim.PendulumParams(), cfg, 25)


@pytest.fixture(scope="session")
def pendulum_clean():
    cfg = sim.SimConfig(noise_sigma=0.0, seed=3, validity=(np.inf, 0.1))
    return sim.generate_pendulum_dataset(sim.PendulumParams(), cfg, 25)


@pytest.fixture(scope="session")
def unstable_scalar():
    # y' = y + u  <=>  y' + [-1, -1][u; y] = 0
    return scalar_dataset([[-1.0, -1.0]], K=2, seed=1)
