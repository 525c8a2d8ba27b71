"""Bilinear image sampling and counter-based deterministic uniforms."""

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(x):
    """Vectorized splitmix64 finalizer over uint64 arrays."""
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        x = (np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)) & _MASK
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9) & _MASK
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB) & _MASK
        return x ^ (x >> np.uint64(31))


def hash_uniforms(seeds, n_samples, dim):
    """Deterministic uniforms in [0,1): shape (len(seeds), n_samples).

    Counter-based, so results are independent of chunking or thread
    scheduling: each (seed, sample, dim) triple hashes independently.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    idx = np.arange(n_samples, dtype=np.uint64)
    with np.errstate(over="ignore"):
        mixed = idx * np.uint64(0x9E3779B97F4A7C15) + np.uint64(dim)
    state = splitmix64(seeds[:, None] ^ splitmix64(mixed))
    return (state >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seeds(global_seed, ids):
    """Per-element seed streams from a global seed and integer ids."""
    base = splitmix64(np.uint64(np.int64(global_seed) & 0x7FFFFFFFFFFFFFFF))
    return splitmix64(np.asarray(ids, dtype=np.uint64) ^ base)


def bilinear_sample(img, x, y):
    """Sample img (H,W[,C]) at continuous pixel coords; centers at i+0.5.

    Coordinates are clamped to the image border (no wrap).
    """
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_uv_map(uv_map, uvs):
    """Bilinear-sample a UV-space map (row 0 = v=1) at UV coordinates."""
    res_y, res_x = uv_map.shape[:2]
    x = uvs[..., 0] * res_x
    y = (1.0 - uvs[..., 1]) * res_y
    return bilinear_sample(uv_map, x, y)
