import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Published confusion matrices as printed (order running, braking, left,
# right; rows predicted, columns actual), then reordered to the class ids
# braking=0, running=1, left_turn=2, right_turn=3.
_PRINTED_ORDER = [1, 0, 2, 3]
FC1_PRINTED = np.array([[762, 14, 41, 11],
                        [12, 780, 27, 26],
                        [25, 6, 693, 39],
                        [14, 21, 15, 708]])
FC2_PRINTED = np.array([[773, 20, 30, 32],
                        [12, 767, 16, 44],
                        [18, 8, 709, 34],
                        [10, 26, 21, 674]])
FC1_MATRIX = FC1_PRINTED[np.ix_(_PRINTED_ORDER, _PRINTED_ORDER)]
FC2_MATRIX = FC2_PRINTED[np.ix_(_PRINTED_ORDER, _PRINTED_ORDER)]


@pytest.fixture
def fc1_matrix():
    return FC1_MATRIX.copy()


@pytest.fixture
def fc2_matrix():
    return FC2_MATRIX.copy()


# acceptance verdicts, printed once at the end of the session
_VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or rep.failed:
        _VERDICTS[number] = ("PASS" if rep.passed else "FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        status, title = _VERDICTS[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")
