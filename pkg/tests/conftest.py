import numpy as np
import pytest

from pbrbake.camera import standard_bundle
from pbrbake.raster import build_texel_table, rasterize_view
from pbrbake.shade import MaterialSample
from pbrbake.testlab import make_asset


GRAY = MaterialSample(albedo=np.array([0.5, 0.5, 0.5]), metallic=0.0, roughness=1.0)


@pytest.fixture(scope="session")
def small_bundle():
    return standard_bundle(resolution=128)


@pytest.fixture(scope="session")
def sphere_asset():
    return make_asset("sphere", ("gradient",), 96)


@pytest.fixture(scope="session")
def cube_asset():
    return make_asset("cube", ("checker", 6), 96)


@pytest.fixture(scope="session")
def sphere_scene(sphere_asset, small_bundle):
    mesh, truth = sphere_asset
    gbuffers = [rasterize_view(mesh, p) for p in small_bundle.poses]
    table = build_texel_table(mesh, truth.resolution)
    return mesh, truth, small_bundle, gbuffers, table


@pytest.fixture(scope="session")
def cube_scene(cube_asset, small_bundle):
    mesh, truth = cube_asset
    gbuffers = [rasterize_view(mesh, p) for p in small_bundle.poses]
    table = build_texel_table(mesh, truth.resolution)
    return mesh, truth, small_bundle, gbuffers, table
