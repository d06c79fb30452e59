import numpy as np
import pytest

from coupled_nls.functionals import FunctionalContext
from coupled_nls.grid import GridMode, GridSpec, build_grid
from coupled_nls.model import PotentialSet, ProblemSpec, QuarticCoupled, benchmark_problem


@pytest.fixture(scope="session")
def bench_grid():
    return build_grid(GridSpec(3, 12.0, 400, GridMode.RADIAL))


@pytest.fixture(scope="session")
def bench_ctx(bench_grid):
    return FunctionalContext.from_problem(benchmark_problem(bench_grid))


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(GridSpec(3, 12.0, 200, GridMode.RADIAL))


@pytest.fixture(scope="session")
def small_ctx(small_grid):
    return FunctionalContext.from_problem(benchmark_problem(small_grid))


def tiny_problem(lam=0.4, mode=GridMode.FULL_LINE, n_nodes=3, gamma=0.5):
    """Ten-unknown full-line instance with b1 != b2, so no rotation symmetry."""
    grid = build_grid(GridSpec(1, 3.0, n_nodes, mode), min_nodes=2)
    pots = PotentialSet.sample(grid, lambda r: 1 + r**2, lambda r: 2 + r**2, 1.0, 1.0, gamma)
    return ProblemSpec(grid, pots, QuarticCoupled(), lam)


def random_tiny_problem(rng, lam=0.0, nl=None):
    """Random potentials on a grid with at most 12 unknowns and three positive pencil values."""
    mode = GridMode.FULL_LINE if rng.random() < 0.5 else GridMode.RADIAL
    n = int(rng.integers(3, 4)) if mode is GridMode.FULL_LINE else int(rng.integers(4, 7))
    dim = 1 if mode is GridMode.FULL_LINE else int(rng.integers(1, 4))
    grid = build_grid(GridSpec(dim, float(rng.uniform(1.0, 4.0)), n, mode), min_nodes=2)
    k = grid.size
    pots = PotentialSet(
        b1=rng.uniform(0.5, 3.0, k), b2=rng.uniform(0.5, 3.0, k),
        V1=rng.uniform(0.2, 2.0, k), V2=rng.uniform(-1.0, 2.0, k), gamma=rng.uniform(-1.0, 1.0, k),
    )
    return ProblemSpec(grid, pots, nl or QuarticCoupled(), lam)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
