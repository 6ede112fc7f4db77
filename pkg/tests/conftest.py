import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from visubcat import available_backends, backend, set_backend
from visubcat.imaging import GrayImage

settings.register_profile("visubcat", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("visubcat")


@pytest.fixture(params=available_backends())
def each_backend(request):
    """Run the test once per kernel backend."""
    prev = backend()
    set_backend(request.param)
    yield request.param
    set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, w, h):
    return GrayImage(rng.random((h, w)))


_CRITERIA = []


@pytest.fixture
def criterion(capsys):
    """report(n, ok, detail): print one PASS/FAIL line now and again in the summary."""
    def report(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append((n, line))
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
