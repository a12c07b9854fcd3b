import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nlsgibbs.fourier_state import ModelParams  # noqa: E402
from nlsgibbs.normal_form import build_package  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


def pytest_addoption(parser):
    parser.addoption("--bless", action="store_true", default=False,
                     help="regenerate the golden polynomial files instead of comparing")


@pytest.fixture
def bless(request):
    return request.config.getoption("--bless")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cubic_params():
    return ModelParams((1.0,), 32.0, 4)


@pytest.fixture(scope="session")
def pkg4(cubic_params):
    """Quartic nonlinearity, N = 4, target mode 1."""
    return build_package(4, 1, cubic_params)


@pytest.fixture(scope="session")
def quintic_params():
    return ModelParams((1.0, 0.5), 32.0, 6)


@pytest.fixture(scope="session")
def pkg6(quintic_params):
    """``F = x^2 + x^3/2``, N = 6, target mode 1."""
    return build_package(6, 1, quintic_params)


@pytest.fixture(scope="session")
def pkg8():
    return build_package(8, 1, ModelParams((1.0,), 32.0, 8))


# -- acceptance reporting ------------------------------------------------------------

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if not rep.passed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    _CRITERIA[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
