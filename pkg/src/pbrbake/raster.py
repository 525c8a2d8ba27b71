"""Software rasterization: per-view G-buffers and UV-space texel tables.

The triangle loops are JIT-compiled with numba; everything else is plain
numpy. Rasterization is two-sided (inconsistent winding is common in
artist meshes) and uses perspective-correct barycentric interpolation
with a nearest-surface depth test.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import camera as cam
from .mesh import Mesh

log = logging.getLogger(__name__)

GUTTER_TEXELS = 1


@dataclass(frozen=True)
class GBuffer:
    """Per-view geometry buffers; depth is +inf where no surface."""

    depth: np.ndarray     # (H,W) float64, view-axis depth
    normal: np.ndarray    # (H,W,3) world-space unit where masked
    uv: np.ndarray        # (H,W,2)
    position: np.ndarray  # (H,W,3) world-space
    mask: np.ndarray      # (H,W) bool

    @property
    def resolution(self):
        return self.depth.shape[0]


@dataclass(frozen=True)
class TexelTable:
    """UV-space table mapping texels to surface points.

    `valid` marks texels whose center is covered by a triangle in UV
    space; `filled` additionally includes the 1-texel gutter whose
    attributes are copied from the nearest valid texel.
    """

    position: np.ndarray  # (R,R,3)
    normal: np.ndarray    # (R,R,3)
    valid: np.ndarray     # (R,R) bool
    filled: np.ndarray    # (R,R) bool
    resolution: int


@njit(cache=True)
def _raster_tris(pix, depth_v, attr_pos, attr_nrm, attr_uv, depth, nrm, uvb, pos, persp):
    h, w = depth.shape
    nf = pix.shape[0]
    for f in range(nf):
        ax, ay = pix[f, 0, 0], pix[f, 0, 1]
        bx, by = pix[f, 1, 0], pix[f, 1, 1]
        cx, cy = pix[f, 2, 0], pix[f, 2, 1]
        da, db, dc = depth_v[f, 0], depth_v[f, 1], depth_v[f, 2]
        if da <= 1e-6 or db <= 1e-6 or dc <= 1e-6:
            continue  # behind or at the camera; no clipping support
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        x0 = max(0, int(np.floor(min(ax, min(bx, cx)) - 0.5)))
        x1 = min(w - 1, int(np.ceil(max(ax, max(bx, cx)) + 0.5)))
        y0 = max(0, int(np.floor(min(ay, min(by, cy)) - 0.5)))
        y1 = min(h - 1, int(np.ceil(max(ay, max(by, cy)) + 0.5)))
        inv_area = 1.0 / area
        for y in range(y0, y1 + 1):
            py = y + 0.5
            for x in range(x0, x1 + 1):
                px = x + 0.5
                w0 = ((cx - bx) * (py - by) - (cy - by) * (px - bx)) * inv_area
                w1 = ((ax - cx) * (py - cy) - (ay - cy) * (px - cx)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if persp:
                    # perspective-correct weights
                    q0, q1, q2 = w0 / da, w1 / db, w2 / dc
                    qs = q0 + q1 + q2
                    d = 1.0 / qs
                else:
                    q0, q1, q2 = w0, w1, w2
                    qs = 1.0
                    d = w0 * da + w1 * db + w2 * dc
                if d < depth[y, x]:
                    depth[y, x] = d
                    q0, q1, q2 = q0 / qs, q1 / qs, q2 / qs
                    for k in range(3):
                        pos[y, x, k] = (q0 * attr_pos[f, 0, k] + q1 * attr_pos[f, 1, k]
                                        + q2 * attr_pos[f, 2, k])
                        nrm[y, x, k] = (q0 * attr_nrm[f, 0, k] + q1 * attr_nrm[f, 1, k]
                                        + q2 * attr_nrm[f, 2, k])
                    for k in range(2):
                        uvb[y, x, k] = (q0 * attr_uv[f, 0, k] + q1 * attr_uv[f, 1, k]
                                        + q2 * attr_uv[f, 2, k])


@njit(cache=True)
def _raster_uv(pix, attr_pos, attr_nrm, written, pos, nrm):
    """First-triangle-wins UV-space rasterization. Returns overlap count."""
    res = written.shape[0]
    nf = pix.shape[0]
    overlaps = 0
    for f in range(nf):
        ax, ay = pix[f, 0, 0], pix[f, 0, 1]
        bx, by = pix[f, 1, 0], pix[f, 1, 1]
        cx, cy = pix[f, 2, 0], pix[f, 2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        x0 = max(0, int(np.floor(min(ax, min(bx, cx)) - 0.5)))
        x1 = min(res - 1, int(np.ceil(max(ax, max(bx, cx)) + 0.5)))
        y0 = max(0, int(np.floor(min(ay, min(by, cy)) - 0.5)))
        y1 = min(res - 1, int(np.ceil(max(ay, max(by, cy)) + 0.5)))
        inv_area = 1.0 / area
        for y in range(y0, y1 + 1):
            py = y + 0.5
            for x in range(x0, x1 + 1):
                px = x + 0.5
                w0 = ((cx - bx) * (py - by) - (cy - by) * (px - bx)) * inv_area
                w1 = ((ax - cx) * (py - cy) - (ay - cy) * (px - cx)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if written[y, x]:
                    overlaps += 1
                    continue
                written[y, x] = True
                for k in range(3):
                    pos[y, x, k] = (w0 * attr_pos[f, 0, k] + w1 * attr_pos[f, 1, k]
                                    + w2 * attr_pos[f, 2, k])
                    nrm[y, x, k] = (w0 * attr_nrm[f, 0, k] + w1 * attr_nrm[f, 1, k]
                                    + w2 * attr_nrm[f, 2, k])
    return overlaps


def rasterize_view(mesh: Mesh, pose: cam.CameraPose) -> GBuffer:
    """Rasterize one view into a G-buffer (depth/normal/uv/position/mask)."""
    res = pose.resolution
    depth = np.full((res, res), np.inf)
    nrm = np.zeros((res, res, 3))
    uvb = np.zeros((res, res, 2))
    pos = np.zeros((res, res, 3))
    if mesh.num_triangles > 0:
        corners = mesh.vertices[mesh.triangles]          # (F,3,3)
        pix, depth_v = cam.project(pose, corners.reshape(-1, 3))
        pix = np.ascontiguousarray(pix.reshape(-1, 3, 2))
        depth_v = np.ascontiguousarray(depth_v.reshape(-1, 3))
        attr_nrm = np.ascontiguousarray(mesh.normals[mesh.triangles])
        _raster_tris(pix, depth_v, np.ascontiguousarray(corners), attr_nrm,
                     np.ascontiguousarray(mesh.uvs), depth, nrm, uvb, pos,
                     pose.projection == "perspective")
    mask = np.isfinite(depth)
    lens = np.linalg.norm(nrm, axis=-1)
    safe = lens > 0
    nrm[safe] /= lens[safe][..., None]
    uvb = np.clip(uvb, 0.0, 1.0)
    return GBuffer(depth=depth, normal=nrm, uv=uvb, position=pos, mask=mask)


def uv_to_texel_grid(uvs, res):
    """Map UVs to continuous texel pixel coordinates (row 0 = v=1)."""
    u = uvs[..., 0] * res
    v = (1.0 - uvs[..., 1]) * res
    return np.stack([u, v], axis=-1)


def texel_centers_uv(res):
    """UV coordinates of all texel centers, shape (res, res, 2)."""
    idx = (np.arange(res) + 0.5) / res
    u, vrow = np.meshgrid(idx, idx)
    return np.stack([u, 1.0 - vrow], axis=-1)


def build_texel_table(mesh: Mesh, texture_res: int) -> TexelTable:
    """Rasterize the UV atlas: per-texel world position and normal.

    Overlapping charts resolve first-triangle-wins (with a warning); a
    1-texel gutter copies attributes of the nearest valid texel so
    bilinear sampling at chart borders does not bleed background.
    """
    res = int(texture_res)
    pos = np.zeros((res, res, 3))
    nrm = np.zeros((res, res, 3))
    written = np.zeros((res, res), dtype=np.bool_)
    if mesh.num_triangles > 0:
        pix = np.ascontiguousarray(uv_to_texel_grid(mesh.uvs, res))
        attr_pos = np.ascontiguousarray(mesh.vertices[mesh.triangles])
        attr_nrm = np.ascontiguousarray(mesh.normals[mesh.triangles])
        overlaps = _raster_uv(pix, attr_pos, attr_nrm, written, pos, nrm)
        if overlaps:
            log.warning("UV atlas overlap: %d texel writes discarded (first-triangle-wins)",
                        overlaps)
    valid = written.copy()
    lens = np.linalg.norm(nrm, axis=-1)
    safe = lens > 0
    nrm[safe] /= lens[safe][..., None]
    filled = valid.copy()
    pos, nrm, filled = _dilate_attrs(pos, nrm, valid, filled, GUTTER_TEXELS)
    return TexelTable(position=pos, normal=nrm, valid=valid, filled=filled, resolution=res)


def _dilate_attrs(pos, nrm, valid, filled, steps):
    """Grow attributes outward by `steps` texels (4-neighborhood)."""
    for _ in range(steps):
        cur = filled
        grown = cur.copy()
        pos = pos.copy()
        nrm = nrm.copy()
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            shifted = np.roll(cur, (dy, dx), axis=(0, 1))
            if dy == 1:
                shifted[0, :] = False
            elif dy == -1:
                shifted[-1, :] = False
            if dx == 1:
                shifted[:, 0] = False
            elif dx == -1:
                shifted[:, -1] = False
            new = shifted & ~grown
            if not new.any():
                continue
            src_y, src_x = np.nonzero(new)
            pos[src_y, src_x] = np.roll(pos, (dy, dx), axis=(0, 1))[src_y, src_x]
            nrm[src_y, src_x] = np.roll(nrm, (dy, dx), axis=(0, 1))[src_y, src_x]
            grown |= new
        filled = grown
    return pos, nrm, filled
