import math

import numpy as np
import pytest

from eitfem.mesh import ElectrodeConfig, generate_disk_mesh, generate_square_mesh, refine, tag_electrodes


def disk_electrodes(n_electrodes=8, n_base=16, z=0.1):
    """Electrodes whose ends sit on boundary vertices of every refinement of an ``n_base``-gon."""
    step = 2 * math.pi / n_base
    per = n_base // n_electrodes
    arcs = tuple((k * per * step, (k * per + per / 2) * step) for k in range(n_electrodes))
    return ElectrodeConfig(arcs, (z,) * n_electrodes)


def square_electrodes(n_electrodes=8, z=0.1):
    pitch = 4.0 / n_electrodes
    return ElectrodeConfig(tuple((k * pitch, k * pitch + pitch / 2) for k in range(n_electrodes)),
                           (z,) * n_electrodes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def disk8():
    el = disk_electrodes(8, 16)
    return tag_electrodes(refine(generate_disk_mesh(16), 1), el), el


@pytest.fixture(scope="session")
def square8():
    el = square_electrodes(8)
    return tag_electrodes(generate_square_mesh(8), el), el
