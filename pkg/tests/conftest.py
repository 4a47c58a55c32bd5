import numpy as np
import pytest

from capdrop.spectral import get_grid


@pytest.fixture(scope="session")
def grid():
    return get_grid(31, 32)


@pytest.fixture(scope="session")
def small_grid():
    return get_grid(15, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_vector_field(grid, rng, degree=6):
    """Random polynomial vector field (exactly representable on the grid)."""
    x, y = grid.x, grid.y
    out = np.zeros((2,) + grid.shape)
    for c in range(2):
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                out[c] += rng.standard_normal() * x**i * y**j / (1 + i + j) ** 2
    return out


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
