import os

# the timed acceptance experiments are specified single-threaded
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pathlib
from contextlib import contextmanager

import pytest

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture
def tiny_dir():
    return FIXTURES / "tiny"


@pytest.fixture
def ingest_dir():
    return FIXTURES / "ingest"


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])


@contextmanager
def criterion(number: int, title: str):
    """Record PASS when the block completes and FAIL when it raises."""
    state = {"detail": ""}
    try:
        yield state
    except BaseException:
        record_criterion(number, title, False, state["detail"])
        raise
    record_criterion(number, title, True, state["detail"])
