"""Back-projection of multi-view images into UV texture space.

Per texel and per view: project the texel's world position into the
view, test visibility (depth agreement plus an angle cutoff against the
direction to the camera), and blend bilinear samples from contributing
views with weights max(0, cos angle)^exponent. The gather is per-texel,
so results are deterministic and independent of scheduling.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch
from .sampling import bilinear_sample

DEFAULT_DEPTH_EPSILON = 5e-3
DEFAULT_ANGLE_CUTOFF_DEG = 80.0
DEFAULT_WEIGHT_EXPONENT = 2.0


@dataclass(frozen=True)
class BakeParams:
    depth_epsilon: float = DEFAULT_DEPTH_EPSILON
    angle_cutoff_deg: float = DEFAULT_ANGLE_CUTOFF_DEG
    weight_exponent: float = DEFAULT_WEIGHT_EXPONENT


@dataclass(frozen=True)
class MaterialTextureSet:
    """UV-space PBR maps plus the baked coverage mask."""

    albedo: np.ndarray     # (R,R,3) in [0,1]
    metallic: np.ndarray   # (R,R) in [0,1]
    roughness: np.ndarray  # (R,R) in [0,1]
    coverage: np.ndarray   # (R,R) bool
    resolution: int

    def with_maps(self, **kwargs):
        return replace(self, **kwargs)


def constant_material_set(resolution, albedo, metallic, roughness, coverage=None):
    res = int(resolution)
    if coverage is None:
        coverage = np.ones((res, res), dtype=bool)
    return MaterialTextureSet(
        albedo=np.broadcast_to(np.asarray(albedo, dtype=np.float64), (res, res, 3)).copy(),
        metallic=np.full((res, res), float(metallic)),
        roughness=np.full((res, res), float(roughness)),
        coverage=coverage,
        resolution=res,
    )


def view_weights(gbuffers, table, bundle, params: BakeParams = BakeParams()):
    """Per-view contribution weights and projected pixel coords for texels.

    Returns (weights (6,T), pix (6,T,2)) over the table's filled texels
    in row-major order.
    """
    from .camera import project

    sel = table.filled
    positions = table.position[sel]
    normals = table.normal[sel]
    t = positions.shape[0]
    weights = np.zeros((6, t))
    pix_all = np.zeros((6, t, 2))
    cos_cut = np.cos(np.radians(params.angle_cutoff_deg))
    for i, pose in enumerate(bundle.poses):
        gb = gbuffers[i]
        if gb.resolution != pose.resolution:
            raise DimensionMismatch("gbuffer resolution does not match pose")
        pix, depth = project(pose, positions)
        pix_all[i] = pix
        res = pose.resolution
        xi = np.clip(np.floor(pix[:, 0]).astype(np.int64), 0, res - 1)
        yi = np.clip(np.floor(pix[:, 1]).astype(np.int64), 0, res - 1)
        in_frame = ((pix[:, 0] >= 0) & (pix[:, 0] < res)
                    & (pix[:, 1] >= 0) & (pix[:, 1] < res) & (depth > 0))
        stored = gb.depth[yi, xi]
        visible = in_frame & (depth <= stored + params.depth_epsilon)
        to_cam = pose.eye - positions
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=-1, keepdims=True), 1e-12)
        cosang = np.sum(normals * to_cam, axis=-1)
        visible &= cosang > cos_cut
        w = np.where(visible, np.maximum(0.0, cosang) ** params.weight_exponent, 0.0)
        weights[i] = w
    return weights, pix_all


def _blend(views, weights, pix, sel, resolution, channels):
    total = weights.sum(axis=0)
    shape = (resolution, resolution, channels) if channels > 1 else (resolution, resolution)
    out_flat = np.zeros((weights.shape[1], channels))
    for i in range(6):
        contrib = weights[i] > 0
        if not contrib.any():
            continue
        img = views[i]
        sampled = bilinear_sample(img, pix[i, contrib, 0], pix[i, contrib, 1])
        sampled = np.atleast_2d(sampled.T).T.reshape(contrib.sum(), channels)
        out_flat[contrib] += weights[i, contrib, None] * sampled
    covered_flat = total > 0
    out_flat[covered_flat] /= total[covered_flat, None]
    out = np.zeros(shape)
    cov = np.zeros((resolution, resolution), dtype=bool)
    if channels > 1:
        out[sel] = out_flat
    else:
        out[sel] = out_flat[:, 0]
    cov[sel] = covered_flat
    return np.clip(out, 0.0, 1.0), cov


def backproject(views, gbuffers, table, bundle, params: BakeParams = BakeParams()):
    """Bake one channel stack (6 view images) into UV space.

    Returns (uv_map, coverage). `views` is (6,H,W) or (6,H,W,3).
    """
    views = np.asarray(views, dtype=np.float64)
    if views.shape[0] != 6:
        raise DimensionMismatch("expected 6 views")
    if views.shape[1] != bundle.resolution or views.shape[2] != bundle.resolution:
        raise DimensionMismatch("view image resolution does not match bundle")
    channels = views.shape[3] if views.ndim == 4 else 1
    weights, pix = view_weights(gbuffers, table, bundle, params)
    return _blend(views, weights, pix, table.filled, table.resolution, channels)


def bake_pbr(albedo_views, metallic_views, roughness_views, gbuffers, table, bundle,
             params: BakeParams = BakeParams()) -> MaterialTextureSet:
    """Bake all three channels with weights computed once (shared coverage)."""
    weights, pix = view_weights(gbuffers, table, bundle, params)
    sel = table.filled
    res = table.resolution
    albedo_views = np.asarray(albedo_views, dtype=np.float64)
    albedo, cov = _blend(albedo_views, weights, pix, sel, res, 3)
    metallic, cov_m = _blend(np.asarray(metallic_views, dtype=np.float64),
                             weights, pix, sel, res, 1)
    roughness, cov_r = _blend(np.asarray(roughness_views, dtype=np.float64),
                              weights, pix, sel, res, 1)
    assert np.array_equal(cov, cov_m) and np.array_equal(cov, cov_r)
    return MaterialTextureSet(albedo=albedo, metallic=metallic, roughness=roughness,
                              coverage=cov, resolution=res)
