import pathlib
import sys

import pytest

HERE = pathlib.Path(__file__).parent
sys.path.insert(0, str(HERE))  # oracle helper modules live next to the tests


@pytest.fixture(scope="session")
def voronoi_path() -> str:
    return str(HERE / "data" / "voronoi27.json")


@pytest.fixture(scope="session")
def voronoi_mesh(voronoi_path):
    from polymag.mesh import load_mesh
    return load_mesh(voronoi_path)
