import pytest

from morphparse import parse_conllu

from helpers import R_TEXT


@pytest.fixture
def sentence_r():
    return parse_conllu(R_TEXT).sentences[0]


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, text): acceptance-gate scoreboard line")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is None:
        return
    num, text = marker.args
    status = "PASS" if rep.passed else "FAIL"
    tr.write_line(f"[{status}] criterion {num:2d}: {text}")
