from pathlib import Path

import numpy as np
import pytest

from senselab.lstm_lm import LstmParams, ModelConfig, init_params, kernels

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    impl = kernels.get_backend(request.param)
    monkeypatch.setattr(kernels, "lstm_forward", impl.lstm_forward)
    monkeypatch.setattr(kernels, "lstm_backward", impl.lstm_backward)
    return request.param


def perturbed_params(V=12, p=4, h=6, seed=0, scale=0.5):
    base = init_params(ModelConfig(V=V, p=p, h=h, seed=seed))
    rng = np.random.default_rng(seed + 1000)
    return LstmParams(**{k: v + rng.normal(scale=scale, size=v.shape) for k, v in base.as_dict().items()})


@pytest.fixture
def small_params():
    return perturbed_params()


def pytest_terminal_summary(terminalreporter):
    """List the acceptance verdicts, one line per criterion, after the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
