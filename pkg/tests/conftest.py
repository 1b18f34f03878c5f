import numpy as np
import pytest

MARY_HATES_LUCY = "(S (NP (NNP Mary)) (VP (VBZ hates) (NP (NNP Lucy))))"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(name, ok, detail):
    ACCEPTANCE[name] = (bool(ok), detail)
    print(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
