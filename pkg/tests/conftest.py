import hashlib
import json

import numpy as np
import pytest

from mimodet.fsnet import TrainConfig, load_params, save_params, train

_ACCEPTANCE = []


def _network(request, cfg: TrainConfig):
    """Train once per config and cache the weight file across sessions."""
    key = hashlib.sha1(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:12]
    folder = request.config.cache.mkdir("mimodet-nets")
    path = folder / f"fsnet-{cfg.n_t}x{cfg.n_r}-{key}.bin"
    if not path.exists():
        save_params(train(cfg).params, path)
    return load_params(path)


@pytest.fixture(scope="session")
def net4(request):
    """4x4 complex (M = 8) QPSK network."""
    return _network(request, TrainConfig(n_t=4, n_r=4, epochs=500, batch_size=500, seed=11))


@pytest.fixture(scope="session")
def net8(request):
    """8x8 complex (M = 16) QPSK network."""
    return _network(request, TrainConfig(n_t=8, n_r=8, epochs=1000, batch_size=500, seed=12))


@pytest.fixture(scope="session")
def net16(request):
    """16x16 complex (M = 32) QPSK network, desk scale: 2000 epochs, batch 500."""
    return _network(request, TrainConfig(n_t=16, n_r=16, epochs=2000, batch_size=500, seed=13))


@pytest.fixture(scope="session")
def net16_path(request, net16):
    folder = request.config.cache.mkdir("mimodet-nets")
    path = folder / "fsnet-16x16-current.bin"
    save_params(net16, path)
    return path


@pytest.fixture
def report():
    """Record one acceptance line; shown in the terminal summary and on stdout."""
    def _report(number: int, name: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
        print(line)
        _ACCEPTANCE.append((number, line))
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
