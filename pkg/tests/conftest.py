import numpy as np
import pytest
from hypothesis import settings

from memoryheat.elliptic import laplacian, operator_from_beltrami
from memoryheat.grid import Grid
from memoryheat.kernel import kernel_from_exponential_sum

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


@pytest.fixture
def grid16():
    return Grid(16, 16)


@pytest.fixture
def lap16(grid16):
    return laplacian(grid16)


@pytest.fixture
def single_mode():
    return kernel_from_exponential_sum([(1.0, 1.0)])


@pytest.fixture
def two_modes():
    return kernel_from_exponential_sum([(0.5, 1.0), (0.5, 4.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def bump_mu(grid, k, angle=0.3):
    X, Y = grid.node_coords()
    return k * np.exp(1j * angle) * np.sin(np.pi * X / grid.Lx) ** 2 * np.sin(np.pi * Y / grid.Ly) ** 2


@pytest.fixture
def bump_op(grid16):
    return operator_from_beltrami(bump_mu(grid16, 0.5), grid16)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns whether every check passed."""

    def report(number, title, checks, detail, elapsed, budget):
        checks = dict(checks, runtime=elapsed <= budget)
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = (f"criterion {number:2d} {'PASS' if ok else 'FAIL'} {title}: {detail} "
                f"[{elapsed:.1f} s of {budget:g} s]")
        if failed:
            line += f" failed checks: {', '.join(failed)}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok, failed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
