import shutil
from pathlib import Path

import pytest

from embed_curation.synthetic import FIXTURE_DIR

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def fixture_dir(tmp_path) -> Path:
    """Private copy of the bundled fixture corpus."""
    dst = tmp_path / "fixture"
    shutil.copytree(FIXTURE_DIR, dst, ignore=shutil.ignore_patterns("out"))
    return dst


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the line is printed in the summary."""

    def record(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail}"
        _CRITERIA[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
