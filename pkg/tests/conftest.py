import numpy as np
import pytest

from conformal_rectifier.conformal_service import nu_density
from conformal_rectifier.curve_model_service import ArcLengthMap, CurveSpec, arclength_map, catalog_curve

HELIX_KAPPA = 0.4
HELIX_TAU = 0.2
HELIX_NU = 0.08
HELIX_Q = -1.0
HELIX_T = np.sqrt(0.5)
HELIX_P = (HELIX_Q + 0.75 * 0.5) / 24.0


def generic_s(curve: CurveSpec, amap: ArcLengthMap) -> float:
    """Arc length of the largest nu in the middle half of the domain."""
    t_min, t_max = curve.param_domain
    quarter = (t_max - t_min) / 4.0
    grid = np.linspace(t_min + quarter, t_max - quarter, 401)
    return amap.s_of_t(float(grid[int(np.argmax(nu_density(curve, grid)))]))


@pytest.fixture(scope="session")
def helix():
    return catalog_curve("helix", [2, 1])


@pytest.fixture(scope="session")
def helix_map(helix):
    return arclength_map(helix)


@pytest.fixture(scope="session")
def trig_poly():
    return catalog_curve("trig_poly", [42, 3])


@pytest.fixture(scope="session")
def trig_poly_map(trig_poly):
    return arclength_map(trig_poly)


@pytest.fixture(scope="session")
def trig_poly_s0(trig_poly, trig_poly_map):
    return generic_s(trig_poly, trig_poly_map)


@pytest.fixture(scope="session")
def circle():
    return catalog_curve("circle", [1])


@pytest.fixture(scope="session")
def circle_map(circle):
    return arclength_map(circle)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
