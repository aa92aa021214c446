import numpy as np
import pytest

from asi import mission
from asi.flowfield import analytic_flow
from asi.geometry import Domain, build_mesh
from asi.rom import build_reduced_model
from asi.source import SourceParams
from asi.geometry import Box


@pytest.fixture(scope="session")
def unit_domain():
    return Domain((0.0, 0.0), (1.0, 1.0))


@pytest.fixture(scope="session")
def desk():
    """Desk scenario shared by the SI, planner and mission tests."""
    return mission.build_scenario(mission.merge_config(mission.DESK_CONFIG, {}))


@pytest.fixture(scope="session")
def small_rom(unit_domain):
    """Coarse model for tests that loop over many instances."""
    mesh = build_mesh(unit_domain, 21, 21)
    flow = analytic_flow("recirculation", mesh, kappa=0.004, u_max=0.01, inlet=0.0)
    return build_reduced_model(mesh, flow, 10, 10, eta=0.999)


def random_params(rng, M=1, lo=0.1, hi=0.9, min_width=0.08):
    """Feasible towers kept away from the degenerate (zero-width) configuration."""
    p = []
    for _ in range(M):
        a = rng.uniform(lo, hi - min_width, 2)
        b = a + rng.uniform(min_width, min(0.3, hi - a.max()), 2)
        p += [rng.uniform(0.5, 2.0), a[0], a[1], b[0], b[1]]
    return SourceParams(p, [Box((0.0, 0.0), (1.0, 1.0))] * M)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
