import numpy as np
import pytest

from elmfb.elm import SharedWeightPool, train_cascade
from elmfb.harness import ExperimentConfig, generate_training_set
from elmfb.phy import PowerProfile, build_walsh

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def crandn(gen, *shape):
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2)


_NET_CACHE = {}


def trained(cfg: ExperimentConfig):
    """Train (once per session) the cascade for `cfg`; returns (net, training set or None)."""
    key = (cfg.M, cfg.N, cfg.rho, cfg.Eu, cfg.Nt, cfg.seed, cfg.train_sigma2, cfg.ridge)
    if key not in _NET_CACHE:
        ts = generate_training_set(cfg)
        net = train_cascade(
            ts, SharedWeightPool.generate(cfg.seed, cfg.M), build_walsh(cfg.M, cfg.N), PowerProfile(cfg.rho, cfg.Eu)
        )
        keep_ts = cfg.M * cfg.Nt <= 128 * 4000
        _NET_CACHE[key] = (net, ts if keep_ts else None)
    return _NET_CACHE[key]


@pytest.fixture(scope="session")
def small_cfg():
    return ExperimentConfig(M=32, N=4, rho=0.2, Nt=600, snr_grid_db=(0.0, 10.0, float("inf")), seed=3)


@pytest.fixture(scope="session")
def small_net(small_cfg):
    return trained(small_cfg)
