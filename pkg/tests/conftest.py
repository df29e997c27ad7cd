import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "gradient correctness (finite differences)",
    2: "frozen weights byte-identical after training",
    3: "chi-square difference moments",
    4: "Gaussian product convergence",
    5: "largest singular value of Glorot matrices",
    6: "projected row covariance",
    7: "subspace distance oracle",
    8: "desk-scale accuracy reproduction",
    9: "oversmoothing resistance (cosine similarity)",
}

_outcomes: dict[int, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(n, []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n not in _outcomes:
            continue
        ok = all(_outcomes[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}")
