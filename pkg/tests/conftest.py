import numpy as np
import pytest

from cellcycle.model_core import builtin_model


@pytest.fixture
def affine():
    return builtin_model("affine1d")


@pytest.fixture
def cell():
    return builtin_model("cellcycle1d")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the recorded detail."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in rep.nodeid or rep.when != "call" and outcome != "error":
                continue
            props = dict(rep.user_properties)
            name = props.get("criterion") or rep.nodeid.split("::")[-1]
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((name, f"{status}  {name}  {props.get('detail', '')}".rstrip()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
