import numpy as np
import pytest

from pbir.geometry import ImageGrid, ScanGeometry
from pbir.simulate import EllipsePhantom, hu_to_mu, rasterize, simulate_counts
from pbir.solvers import PWLSProblem


@pytest.fixture(scope="session")
def small_geom():
    g = ImageGrid(32, 32, 12.0, 12.0)
    return ScanGeometry.parallel(g, 45)


@pytest.fixture(scope="session")
def small_truth(small_geom):
    return hu_to_mu(rasterize(EllipsePhantom.water_cylinder(), small_geom.grid).values)


@pytest.fixture(scope="session")
def small_sino(small_geom, small_truth):
    return simulate_counts(small_truth, small_geom, 2e5, seed=7)


@pytest.fixture
def small_problem(small_sino):
    return PWLSProblem.from_sinogram(small_sino, beta=5e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Callable recording one (criterion, ok, detail) line for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(n, name, ok, detail):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
