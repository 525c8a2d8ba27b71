"""Six-view camera bundle and projection math.

All cameras look at the origin. Right-handed look-at with +Y up; at the
poles (elevation +/-90) the up vector is -Z for the top view and +Z for
the bottom view. Depth is measured along the view axis (camera-space -z),
increasing away from the camera.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParam

VIEW_IDS = ("front", "right", "back", "left", "top", "bottom")
# (azimuth, elevation) per view, degrees
VIEW_ANGLES = ((0, 0), (90, 0), (180, 0), (270, 0), (0, 90), (0, -90))

DEFAULT_RESOLUTION = 768
DEFAULT_DISTANCE = 2.0
DEFAULT_FOV_Y = 40.0


@dataclass(frozen=True)
class CameraPose:
    azimuth: float
    elevation: float
    distance: float
    fov_y: float = DEFAULT_FOV_Y
    resolution: int = DEFAULT_RESOLUTION
    projection: str = "perspective"

    def __post_init__(self):
        if not (-90.0 <= self.elevation <= 90.0):
            raise InvalidParam(f"elevation {self.elevation} outside [-90, 90]")
        if not (0.0 <= self.azimuth < 360.0):
            raise InvalidParam(f"azimuth {self.azimuth} outside [0, 360)")
        if self.resolution <= 0:
            raise InvalidParam("resolution must be positive")
        if self.projection == "perspective" and not (0.0 < self.fov_y < 180.0):
            raise InvalidParam(f"fov_y {self.fov_y} outside (0, 180)")
        if self.projection not in ("perspective", "orthographic"):
            raise InvalidParam(f"unknown projection {self.projection!r}")
        if self.distance <= 0.0:
            raise InvalidParam("distance must be positive")

    @property
    def eye(self):
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        return np.array([
            self.distance * math.cos(el) * math.sin(az),
            self.distance * math.sin(el),
            self.distance * math.cos(el) * math.cos(az),
        ])

    @property
    def up(self):
        if self.elevation >= 90.0 - 1e-9:
            return np.array([0.0, 0.0, -1.0])
        if self.elevation <= -90.0 + 1e-9:
            return np.array([0.0, 0.0, 1.0])
        return np.array([0.0, 1.0, 0.0])

    @property
    def forward(self):
        e = self.eye
        return -e / np.linalg.norm(e)


@dataclass(frozen=True)
class ViewBundle:
    poses: tuple
    view_ids: tuple = VIEW_IDS

    def __post_init__(self):
        if len(self.poses) != 6 or len(self.view_ids) != 6:
            raise InvalidParam("bundle must have exactly 6 views")
        ref = self.poses[0]
        for p, (az, el) in zip(self.poses, VIEW_ANGLES):
            if (p.azimuth, p.elevation) != (az, el):
                raise InvalidParam("bundle does not match the fixed 6-view layout")
            if (p.distance, p.fov_y, p.resolution) != (ref.distance, ref.fov_y, ref.resolution):
                raise InvalidParam("bundle poses must share distance/fov/resolution")

    @property
    def resolution(self):
        return self.poses[0].resolution

    def to_manifest(self):
        return {
            "view_ids": list(self.view_ids),
            "resolution": self.resolution,
            "poses": [
                {
                    "view_id": vid,
                    "azimuth": p.azimuth,
                    "elevation": p.elevation,
                    "distance": p.distance,
                    "fov_y": p.fov_y,
                    "resolution": p.resolution,
                    "projection": p.projection,
                    "view_matrix": view_matrix(p).tolist(),
                }
                for vid, p in zip(self.view_ids, self.poses)
            ],
        }

    def save_manifest(self, path):
        Path(path).write_text(json.dumps(self.to_manifest(), indent=2))

    @classmethod
    def from_manifest(cls, manifest):
        if isinstance(manifest, (str, Path)):
            manifest = json.loads(Path(manifest).read_text())
        poses = tuple(
            CameraPose(
                azimuth=p["azimuth"], elevation=p["elevation"], distance=p["distance"],
                fov_y=p["fov_y"], resolution=p["resolution"], projection=p["projection"],
            )
            for p in manifest["poses"]
        )
        return cls(poses=poses, view_ids=tuple(manifest["view_ids"]))


def standard_bundle(resolution=DEFAULT_RESOLUTION, distance=DEFAULT_DISTANCE,
                    fov_y=DEFAULT_FOV_Y, projection="perspective") -> ViewBundle:
    """The fixed bundle: 4 azimuths at 90-degree gaps plus top and bottom."""
    poses = tuple(
        CameraPose(azimuth=az, elevation=el, distance=distance, fov_y=fov_y,
                   resolution=resolution, projection=projection)
        for az, el in VIEW_ANGLES
    )
    return ViewBundle(poses=poses)


def camera_basis(pose: CameraPose):
    """Rows of the world-to-camera rotation: right, up, back."""
    f = pose.forward
    up = pose.up
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, f)
    return np.stack([right, true_up, -f])


def view_matrix(pose: CameraPose):
    """4x4 world-to-camera transform (camera looks down -z)."""
    rot = camera_basis(pose)
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = -rot @ pose.eye
    return m


def _half_extents(pose):
    t = math.tan(math.radians(pose.fov_y) / 2.0)
    if pose.projection == "orthographic":
        return pose.distance * t
    return t


def project(pose: CameraPose, points):
    """Project world points to continuous pixel coordinates plus view depth.

    Returns (pixels (...,2), depth (...,)); pixel (0,0) is the top-left
    corner of the image, pixel centers at integer+0.5.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rot = camera_basis(pose)
    cam = pts @ rot.T + (-rot @ pose.eye)
    depth = -cam[..., 2]
    h = _half_extents(pose)
    if pose.projection == "perspective":
        with np.errstate(divide="ignore", invalid="ignore"):
            x_ndc = cam[..., 0] / (depth * h)
            y_ndc = cam[..., 1] / (depth * h)
    else:
        x_ndc = cam[..., 0] / h
        y_ndc = cam[..., 1] / h
    res = pose.resolution
    px = (x_ndc * 0.5 + 0.5) * res
    py = (0.5 - y_ndc * 0.5) * res
    pix = np.stack([px, py], axis=-1)
    if np.asarray(points).ndim == 1:
        return pix[0], float(depth[0])
    return pix, depth


def unproject(pose: CameraPose, pixels, depth):
    """Inverse of project: pixel coordinates + view depth to world points."""
    pix = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    d = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    res = pose.resolution
    x_ndc = pix[..., 0] / res * 2.0 - 1.0
    y_ndc = 1.0 - pix[..., 1] / res * 2.0
    h = _half_extents(pose)
    if pose.projection == "perspective":
        cam = np.stack([x_ndc * h * d, y_ndc * h * d, -d], axis=-1)
    else:
        cam = np.stack([np.broadcast_to(x_ndc * h, d.shape),
                        np.broadcast_to(y_ndc * h, d.shape), -d], axis=-1)
    rot = camera_basis(pose)
    world = cam @ rot + pose.eye
    if np.asarray(pixels).ndim == 1:
        return world[0]
    return world
