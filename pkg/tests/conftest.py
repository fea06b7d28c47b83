import os

import numpy as np
import pytest

from penfem.fespace import build_space
from penfem.mesh import unit_square_mesh

#: (velocity family, pressure family) per CLI pair name.
PAIR_FAMILIES = {"p2p1": ("P2", "P1"), "p3p2": ("P3", "P2"),
                 "crp0": ("CR", "P0")}


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PENFEM_CAVITY", "") == "1":
        return
    skip = pytest.mark.skip(
        reason="Re=100 cavity benchmark is opt-in: set PENFEM_CAVITY=1")
    for item in items:
        if "cavity" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


def make_pair(pair, level):
    """Velocity/pressure spaces for a named element pair."""
    vfam, pfam = PAIR_FAMILIES[pair]
    mesh = unit_square_mesh(level)
    return (build_space(mesh, vfam, multiplicity=2),
            build_space(mesh, pfam))
