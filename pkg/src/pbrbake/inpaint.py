"""Fast-marching hole filling for UV maps, plus 2x upsampling.

Holes are filled in increasing fast-marching-distance order from the
hole boundary. Each filled texel is a normalized weighted average of
known texels within `radius`, with weights combining direction
(alignment with the distance gradient), geometric distance, and
level-set distance; a first-order image-gradient term keeps linear
ramps accurate. Known texels are never modified.
"""

import heapq

import numpy as np
from PIL import Image

from .errors import AllHole, InvalidParam

_KNOWN, _BAND, _INSIDE = 0, 1, 2
_BIG = 1e6

DEFAULT_RADIUS = 5


def _solve_eikonal(y1, x1, y2, x2, t, flags):
    h, w = t.shape
    t1 = t[y1, x1] if 0 <= y1 < h and 0 <= x1 < w and flags[y1, x1] != _INSIDE else _BIG
    t2 = t[y2, x2] if 0 <= y2 < h and 0 <= x2 < w and flags[y2, x2] != _INSIDE else _BIG
    tmin = min(t1, t2)
    if tmin >= _BIG:
        return _BIG
    if abs(t1 - t2) < 1.0:
        d = 2.0 - (t1 - t2) ** 2
        return (t1 + t2 + np.sqrt(d)) / 2.0
    return tmin + 1.0


def _march_distance(hole):
    """Fast-marching distance-to-boundary inside the hole, plus fill order."""
    h, w = hole.shape
    flags = np.where(hole, _INSIDE, _KNOWN).astype(np.int8)
    t = np.where(hole, _BIG, 0.0)
    heap = []
    counter = 0
    ys, xs = np.nonzero(hole)
    for y, x in zip(ys, xs):
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not hole[ny, nx]:
                if flags[y, x] != _BAND:
                    flags[y, x] = _BAND
                    t[y, x] = min(
                        _solve_eikonal(y - 1, x, y, x - 1, t, flags),
                        _solve_eikonal(y + 1, x, y, x + 1, t, flags),
                        _solve_eikonal(y - 1, x, y, x + 1, t, flags),
                        _solve_eikonal(y + 1, x, y, x - 1, t, flags),
                    )
                    if t[y, x] >= _BIG:
                        t[y, x] = 1.0
                    heapq.heappush(heap, (t[y, x], counter, y, x))
                    counter += 1
                break
    order = []
    while heap:
        tv, _, y, x = heapq.heappop(heap)
        if flags[y, x] == _KNOWN:
            continue
        flags[y, x] = _KNOWN
        t[y, x] = tv
        order.append((y, x))
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and flags[ny, nx] == _INSIDE:
                tn = min(
                    _solve_eikonal(ny - 1, nx, ny, nx - 1, t, flags),
                    _solve_eikonal(ny + 1, nx, ny, nx + 1, t, flags),
                    _solve_eikonal(ny - 1, nx, ny, nx + 1, t, flags),
                    _solve_eikonal(ny + 1, nx, ny, nx - 1, t, flags),
                )
                if tn < t[ny, nx]:
                    t[ny, nx] = tn
                flags[ny, nx] = _BAND
                heapq.heappush(heap, (t[ny, nx], counter, ny, nx))
                counter += 1
    return t, order


def telea_inpaint(image, hole_mask, radius=DEFAULT_RADIUS):
    """Fill masked texels of an RGB or scalar UV map; known texels untouched."""
    img = np.asarray(image, dtype=np.float64)
    hole = np.asarray(hole_mask, dtype=bool)
    if hole.shape != img.shape[:2]:
        raise InvalidParam("hole mask shape does not match image")
    if radius < 1:
        raise InvalidParam("radius must be >= 1")
    if hole.all():
        raise AllHole("mask covers the entire image")
    if not hole.any():
        return img.copy()

    scalar = img.ndim == 2
    work = img[..., None].copy() if scalar else img.copy()
    h, w, c = work.shape
    t, order = _march_distance(hole)
    known = ~hole

    offs = [(dy, dx) for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)
            if (dy or dx) and dy * dy + dx * dx <= radius * radius]
    offs = np.asarray(offs)

    for y, x in order:
        ny = y + offs[:, 0]
        nx = x + offs[:, 1]
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ny, nx = ny[ok], nx[ok]
        kn = known[ny, nx]
        if not kn.any():
            known[y, x] = True  # leave zeros; isolated beyond radius
            continue
        ny, nx = ny[kn], nx[kn]
        vec_y = (y - ny).astype(np.float64)
        vec_x = (x - nx).astype(np.float64)
        dist2 = vec_y ** 2 + vec_x ** 2
        dist = np.sqrt(dist2)
        # distance-field gradient at the pixel being filled
        gy = _grad_at(t, known, y, x, 0)
        gx = _grad_at(t, known, y, x, 1)
        direction = np.abs(vec_y * gy + vec_x * gx) / dist
        direction = np.where(direction < 1e-6, 1e-6, direction)
        dst = 1.0 / dist2
        lev = 1.0 / (1.0 + np.abs(t[y, x] - t[ny, nx]))
        wgt = direction * dst * lev
        # first-order extrapolation via image gradient at each known neighbor
        igy = np.zeros((len(ny), c))
        igx = np.zeros((len(ny), c))
        up_ok = (ny > 0) & known[np.maximum(ny - 1, 0), nx]
        dn_ok = (ny < h - 1) & known[np.minimum(ny + 1, h - 1), nx]
        both = up_ok & dn_ok
        igy[both] = (work[ny[both] + 1, nx[both]] - work[ny[both] - 1, nx[both]]) / 2.0
        lf_ok = (nx > 0) & known[ny, np.maximum(nx - 1, 0)]
        rt_ok = (nx < w - 1) & known[ny, np.minimum(nx + 1, w - 1)]
        bothx = lf_ok & rt_ok
        igx[bothx] = (work[ny[bothx], nx[bothx] + 1] - work[ny[bothx], nx[bothx] - 1]) / 2.0
        vals = work[ny, nx] + igy * vec_y[:, None] + igx * vec_x[:, None]
        filled = (wgt[:, None] * vals).sum(axis=0) / wgt.sum()
        # convex-combination guard against gradient overshoot
        base = work[ny, nx]
        work[y, x] = np.clip(filled, base.min(axis=0), base.max(axis=0))
        known[y, x] = True

    return work[..., 0] if scalar else work


def _grad_at(t, known, y, x, axis):
    h, w = t.shape
    if axis == 0:
        lo = t[y - 1, x] if y > 0 and t[y - 1, x] < _BIG else None
        hi = t[y + 1, x] if y < h - 1 and t[y + 1, x] < _BIG else None
    else:
        lo = t[y, x - 1] if x > 0 and t[y, x - 1] < _BIG else None
        hi = t[y, x + 1] if x < w - 1 and t[y, x + 1] < _BIG else None
    if lo is not None and hi is not None:
        return (hi - lo) / 2.0
    if hi is not None:
        return hi - t[y, x]
    if lo is not None:
        return t[y, x] - lo
    return 0.0


def nearest_inpaint(image, hole_mask):
    """Nearest-known-texel fill; fallback for the fast-marching scheme."""
    from scipy import ndimage

    img = np.asarray(image, dtype=np.float64)
    hole = np.asarray(hole_mask, dtype=bool)
    if hole.all():
        raise AllHole("mask covers the entire image")
    if not hole.any():
        return img.copy()
    _, (iy, ix) = ndimage.distance_transform_edt(hole, return_indices=True)
    out = img.copy()
    out[hole] = img[iy[hole], ix[hole]]
    return out


def upsample2x(image, method="lanczos3"):
    """Double the resolution of a UV map; output clamped to [0,1]."""
    resample = {"lanczos3": Image.LANCZOS, "bicubic": Image.BICUBIC}.get(method)
    if resample is None:
        raise InvalidParam(f"unknown upsample method {method!r}")
    img = np.asarray(image, dtype=np.float32)
    scalar = img.ndim == 2
    chans = [img] if scalar else [img[..., i] for i in range(img.shape[2])]
    out = []
    h, w = img.shape[:2]
    for ch in chans:
        pim = Image.fromarray(ch, mode="F").resize((w * 2, h * 2), resample)
        out.append(np.asarray(pim, dtype=np.float64))
    res = out[0] if scalar else np.stack(out, axis=-1)
    return np.clip(res, 0.0, 1.0)
