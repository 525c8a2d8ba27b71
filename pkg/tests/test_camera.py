import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbrbake.camera import (CameraPose, ViewBundle, VIEW_ANGLES, VIEW_IDS, project,
                            standard_bundle, unproject, view_matrix)
from pbrbake.errors import InvalidParam
from pbrbake.mesh import normalize
from pbrbake.testlab import make_cube


def test_standard_bundle_layout():
    b = standard_bundle(768, 2.0, 40.0)
    assert len(b.poses) == 6
    assert b.view_ids == VIEW_IDS
    assert (b.poses[0].azimuth, b.poses[0].elevation) == (0.0, 0.0)
    assert (b.poses[4].azimuth, b.poses[4].elevation) == (0.0, 90.0)
    assert [(p.azimuth, p.elevation) for p in b.poses] == \
        [(float(a), float(e)) for a, e in VIEW_ANGLES]
    for p in b.poses:
        assert (p.distance, p.fov_y, p.resolution) == (2.0, 40.0, 768)


def test_bundle_resolution_independent():
    small = standard_bundle(64, 2.0, 40.0)
    big = standard_bundle(768, 2.0, 40.0)
    for a, b in zip(small.poses, big.poses):
        assert (a.azimuth, a.elevation) == (b.azimuth, b.elevation)
        assert a.resolution == 64


def test_cube_corners_inside_every_frame():
    mesh = normalize(make_cube())
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                        for z in (-0.5, 0.5)])
    assert np.allclose(np.abs(mesh.vertices).max(), 0.5)
    for pose in standard_bundle(768, 2.0, 40.0).poses:
        px, _depth = project(pose, corners)
        assert np.all(px >= 0.0) and np.all(px <= pose.resolution)


def test_origin_projects_to_center():
    for pose in standard_bundle(128, 2.0, 40.0).poses:
        px, depth = project(pose, np.zeros((1, 3)))
        np.testing.assert_allclose(px[0], [64.0, 64.0], atol=1e-9)
        np.testing.assert_allclose(depth[0], 2.0, atol=1e-12)


def test_plus_x_projects_right_of_center():
    front = standard_bundle(128, 2.0, 40.0).poses[0]
    px, _ = project(front, np.array([[0.1, 0.0, 0.0]]))
    assert px[0, 0] > 64.0
    np.testing.assert_allclose(px[0, 1], 64.0, atol=1e-9)


def test_opposite_views_antiparallel():
    b = standard_bundle(64, 2.0, 40.0)
    for i, j in ((0, 2), (1, 3), (4, 5)):
        f_i = b.poses[i].forward
        f_j = b.poses[j].forward
        np.testing.assert_allclose(f_i, -f_j, atol=1e-12)


def test_pole_up_vectors():
    b = standard_bundle(64, 2.0, 40.0)
    np.testing.assert_allclose(b.poses[4].up, [0.0, 0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(b.poses[5].up, [0.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(b.poses[0].up, [0.0, 1.0, 0.0], atol=1e-12)


def test_project_unproject_round_trip():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.4, 0.4, (1000, 3))
    for pose in standard_bundle(256, 2.0, 40.0).poses:
        px, depth = project(pose, pts)
        back = unproject(pose, px, depth)
        np.testing.assert_allclose(back, pts, atol=1e-5)


@settings(deadline=None, max_examples=30)
@given(st.floats(0.0, 359.9), st.floats(-89.0, 89.0))
def test_round_trip_any_pose(az, el):
    pose = CameraPose(azimuth=az, elevation=el, distance=2.0, fov_y=40.0,
                      resolution=64)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.3, 0.3, (50, 3))
    px, depth = project(pose, pts)
    np.testing.assert_allclose(unproject(pose, px, depth), pts, atol=1e-5)


def test_view_matrix_matches_project():
    pose = CameraPose(azimuth=30.0, elevation=20.0, distance=2.0, fov_y=40.0,
                      resolution=64)
    m = view_matrix(pose)
    pt = np.array([0.1, -0.2, 0.3, 1.0])
    cam = m @ pt
    _, depth = project(pose, pt[None, :3])
    np.testing.assert_allclose(-cam[2], depth[0], atol=1e-12)


def test_pose_validation():
    with pytest.raises(InvalidParam):
        CameraPose(azimuth=0.0, elevation=120.0, distance=2.0, fov_y=40.0, resolution=64)
    with pytest.raises(InvalidParam):
        CameraPose(azimuth=0.0, elevation=0.0, distance=2.0, fov_y=190.0, resolution=64)
    with pytest.raises(InvalidParam):
        CameraPose(azimuth=0.0, elevation=0.0, distance=2.0, fov_y=40.0, resolution=0)


def test_bundle_requires_exact_layout():
    b = standard_bundle(64, 2.0, 40.0)
    poses = list(b.poses)
    poses[1] = CameraPose(azimuth=45.0, elevation=0.0, distance=2.0, fov_y=40.0,
                          resolution=64)
    with pytest.raises(InvalidParam):
        ViewBundle(poses=tuple(poses), view_ids=VIEW_IDS)


def test_manifest_round_trip(tmp_path):
    b = standard_bundle(96, 2.0, 40.0)
    path = tmp_path / "bundle.json"
    b.save_manifest(path)
    data = json.loads(path.read_text())
    assert len(data["poses"]) == 6
    again = ViewBundle.from_manifest(path)
    assert again == b
    # matrices serialized for external consumers
    np.testing.assert_allclose(np.asarray(data["poses"][0]["view_matrix"]),
                               view_matrix(b.poses[0]), atol=1e-12)
