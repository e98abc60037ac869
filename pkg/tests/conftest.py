import numpy as np
import pytest

from brokenray.fields import grid_for_domain
from brokenray.geometry import MaskConstraint, unit_cube, unit_square
from brokenray.transport import BrokenRayOperator, SamplingSpec


@pytest.fixture(scope="session")
def square_left():
    """Unit square, measured set = left edge."""
    return unit_square(measure_facets=(0,))


@pytest.fixture(scope="session")
def square3():
    """Unit square, measured set = left, bottom and top edges."""
    return unit_square(measure_facets=(0, 2, 3))


@pytest.fixture(scope="session")
def cube3():
    """Unit cube, measured set = the three faces at the origin corner."""
    return unit_cube(measure_facets=(0, 2, 4))


@pytest.fixture(scope="session")
def cube_slab():
    """Cube with the measured faces cut off above height 0.9."""
    masks = {k: [MaskConstraint.halfspace([0, 0, 1], 0.9)] for k in (0, 2, 4)}
    return unit_cube(measure_facets=(0, 2, 4), masks=masks)


@pytest.fixture(scope="session")
def small_op(square3):
    """Small reusable operator on the 3-edge square."""
    grid = grid_for_domain(square3, 32)
    return BrokenRayOperator(square3, grid, sampling=SamplingSpec(24, 24), n_max=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
