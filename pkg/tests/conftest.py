import numpy as np
import pytest

from stokes_biot.forms import MaterialParams
from stokes_biot.mesh import Subdomain, build_mesh


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def skewed_four_cell_mesh():
    """Two fluid cells over two porous cells with a tilted interface, all at x > 0."""
    vertices = [(0.2, -0.9), (1.3, -1.0), (0.25, 0.05), (1.2, -0.05), (0.3, 1.0), (1.1, 0.95)]
    cells = [(0, 1, 3), (0, 3, 2), (2, 3, 5), (2, 5, 4)]
    tags = [Subdomain.POROUS, Subdomain.POROUS, Subdomain.FLUID, Subdomain.FLUID]
    facets = [(4, 5), (2, 4), (3, 5), (0, 2), (1, 3), (0, 1)]
    markers = ["top", "fluid_side", "fluid_side", "porous_side", "porous_side", "bottom"]
    return build_mesh(vertices, cells, tags, facets, markers)


@pytest.fixture
def four_cell_mesh():
    return skewed_four_cell_mesh()


@pytest.fixture
def cellwise_params():
    return cellwise_material_params()


def cellwise_material_params():
    """Material data with per-cell arrays so cell lookups are exercised."""
    return MaterialParams(lam=np.array([7.0, 13.0, 1.0, 1.0]), mu_s=np.array([2.0, 3.5, 1.0, 1.0]), mu_f=0.3,
                          alpha=0.8, gamma=0.7, c0=0.05, rho_f=1.3, rho_s=1.7, g=(0.4, -9.8),
                          kappa=np.array([0.02, 0.05, np.nan, np.nan]))
