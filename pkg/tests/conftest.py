from __future__ import annotations

import numpy as np
import pytest

from ugda.tensor import ImageF


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_image(rng: np.random.Generator, h: int = 16, w: int = 16, c: int = 3) -> ImageF:
    return ImageF(rng.uniform(0.0, 1.0, (h, w, c)))


def random_pairs(rng: np.random.Generator, n: int, h: int = 16, w: int = 16):
    return [(random_image(rng, h, w), random_image(rng, h, w)) for _ in range(n)]


# -- acceptance summary ---------------------------------------------------------------

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, passed, detail, seconds)``."""

    def record(number: int, title: str, passed: bool, detail: str, seconds: float) -> None:
        status = "PASS" if passed else "FAIL"
        _CRITERIA[number] = f"{status}  criterion {number:>2}  {title}: {detail} ({seconds:.2f} s)"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
