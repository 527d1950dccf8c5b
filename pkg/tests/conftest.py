import numpy as np
import pytest

from aerialmatch.data import generate_dataset

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(seed=5, count=6)


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (number, title), then set .detail."""
    log = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    class Entry:
        def __init__(self):
            self.number, self.title, self.detail = None, "", ""

        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

    entry = Entry()
    yield entry
    call = getattr(request.node, "rep_call", None)
    if entry.number is not None and call is not None:
        log.append((entry.number, entry.title, call.passed, entry.detail))


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_KEY, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(log):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
