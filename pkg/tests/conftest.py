import contextlib
import time

import numpy as np
import pytest

from propval.design import ModelSpec
from propval.model import fit_model
from propval.synth import SynthConfig, simulate_dataset

ACCEPTANCE = pytest.StashKey[dict]()
FIT_SECONDS = {}


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[ACCEPTANCE]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion as PASS or FAIL.

    The block receives a dict; whatever it stores under ``"detail"`` is
    appended to the printed line.
    """
    results = request.config.stash[ACCEPTANCE]

    @contextlib.contextmanager
    def check(number, title):
        info = {"detail": ""}
        try:
            yield info
        except BaseException as exc:
            reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            line = f"FAIL {number:2d}. {title} ({info['detail'] or reason})"
            results[number] = line
            print(line)
            raise
        line = f"PASS {number:2d}. {title}" + (f" ({info['detail']})" if info["detail"] else "")
        results[number] = line
        print(line)

    return check


@pytest.fixture(scope="session")
def small_data():
    """1500 synthetic records; cheap enough for repeated model fits."""
    return simulate_dataset(SynthConfig(n=1500, seed=3))


@pytest.fixture(scope="session")
def default_data():
    """The default synthetic landscape (n=5000, seed 1)."""
    return simulate_dataset(SynthConfig())


@pytest.fixture(scope="session")
def default_sgam(default_data):
    t = time.perf_counter()
    m = fit_model(default_data.records, ModelSpec("sgam"), default_data.graph)
    FIT_SECONDS["default_sgam"] = time.perf_counter() - t
    return m


@pytest.fixture(scope="session")
def small_ngam(small_data):
    return fit_model(small_data.records, ModelSpec("ngam"), small_data.graph)


@pytest.fixture(scope="session")
def small_hedonic(small_data):
    return fit_model(small_data.records, ModelSpec("hedonic"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture(scope="session")
def default_ngam(default_data):
    return fit_model(default_data.records, ModelSpec("ngam"), default_data.graph)
