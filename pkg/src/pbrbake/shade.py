"""Physically based shading against environment lights.

BRDF is the glTF 2.0 metallic-roughness model: GGX distribution, Smith
height-correlated geometry, Schlick Fresnel, F0 = mix(0.04, albedo,
metallic), diffuse = (1 - metallic) * albedo / pi. All radiometry in
linear RGB. Integrals are estimated with seeded counter-based sampling
(cosine-weighted for diffuse/lambertian, GGX half-vector importance
sampling for specular), so results are bit-reproducible regardless of
pixel chunking.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParam, InvalidVector
from .sampling import derive_seeds, hash_uniforms, sample_uv_map

MIN_SAMPLE_COUNT = 16
_MIN_ALPHA = 1e-4
_MIN_NDOTV = 1e-4


@dataclass(frozen=True)
class EnvironmentLight:
    kind: str                 # "uniform" | "equirectangular"
    radiance: np.ndarray      # (3,) or (H,W,3), linear, >= 0
    sample_count: int = 64
    seed: int = 0

    def __post_init__(self):
        rad = np.asarray(self.radiance, dtype=np.float64)
        object.__setattr__(self, "radiance", rad)
        if self.kind not in ("uniform", "equirectangular"):
            raise InvalidParam(f"unknown environment kind {self.kind!r}")
        if self.kind == "uniform" and rad.shape != (3,):
            raise InvalidParam("uniform environment needs a single RGB radiance")
        if self.kind == "equirectangular" and (rad.ndim != 3 or rad.shape[2] != 3):
            raise InvalidParam("equirectangular environment needs an HxWx3 image")
        if np.any(rad < 0.0) or not np.all(np.isfinite(rad)):
            raise InvalidParam("radiance must be finite and non-negative")
        if self.sample_count < MIN_SAMPLE_COUNT:
            raise InvalidParam(f"sample_count must be >= {MIN_SAMPLE_COUNT}")

    def lookup(self, dirs):
        """Radiance arriving from world directions (...,3)."""
        if self.kind == "uniform":
            return np.broadcast_to(self.radiance, dirs.shape).copy()
        h, w = self.radiance.shape[:2]
        d = np.asarray(dirs, dtype=np.float64)
        theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
        phi = np.arctan2(d[..., 0], -d[..., 2])
        u = (phi / (2.0 * np.pi) + 0.5) % 1.0
        v = theta / np.pi
        x = np.clip((u * w).astype(np.int64), 0, w - 1)
        y = np.clip((v * h).astype(np.int64), 0, h - 1)
        return self.radiance[y, x]


def uniform_environment(rgb, sample_count=64, seed=0):
    rgb = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (3,)).copy()
    return EnvironmentLight("uniform", rgb, sample_count, seed)


def make_environment(name, resolution=(64, 128), sample_count=64, seed=0):
    """Bundled procedural equirectangular environments for relighting."""
    h, w = resolution
    v = (np.arange(h) + 0.5) / h          # 0 at zenith
    u = (np.arange(w) + 0.5) / w
    vv, uu = np.meshgrid(v, u, indexing="ij")
    if name == "gradient":
        sky = np.stack([0.35 + 0.2 * vv, 0.45 + 0.25 * vv, 0.8 + 0.2 * (1 - vv)], axis=-1)
        img = sky * (1.6 - 0.9 * vv)[..., None]
    elif name == "sunset":
        warm = np.stack([1.4 * np.ones_like(vv), 0.7 + 0.3 * (1 - vv), 0.35 * np.ones_like(vv)],
                        axis=-1)
        lobe = np.exp(-((uu - 0.25) ** 2) / 0.02 - ((vv - 0.55) ** 2) / 0.02)
        img = 0.25 * warm + 3.0 * lobe[..., None] * np.array([1.0, 0.6, 0.3])
    else:
        raise InvalidParam(f"unknown environment preset {name!r}")
    return EnvironmentLight("equirectangular", img, sample_count, seed)


@dataclass(frozen=True)
class MaterialSample:
    albedo: np.ndarray   # (3,) in [0,1]
    metallic: float
    roughness: float

    def __post_init__(self):
        alb = np.clip(np.asarray(self.albedo, dtype=np.float64), None, None)
        object.__setattr__(self, "albedo", alb)
        vals = np.concatenate([alb, [self.metallic, self.roughness]])
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise InvalidParam("material components must lie in [0,1]")


def _check_unit(v, name):
    lens = np.linalg.norm(np.atleast_2d(v), axis=-1)
    if np.any(np.abs(lens - 1.0) > 1e-4):
        raise InvalidVector(f"{name} must be unit length (|len-1| <= 1e-4)")


def _build_frame(n):
    """Orthonormal tangent frames for normals (N,3): returns (t, b)."""
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def _cosine_dirs(n, u1, u2):
    """Cosine-weighted hemisphere directions around normals.

    n: (N,3); u1,u2: (N,S) -> (N,S,3).
    """
    t, b = _build_frame(n)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(0.0, 1.0 - u1))
    return (x[..., None] * t[:, None, :] + y[..., None] * b[:, None, :]
            + z[..., None] * n[:, None, :])


def _ggx_half_dirs(n, alpha, u1, u2):
    """GGX NDF-sampled half vectors around normals. alpha: (N,)."""
    t, b = _build_frame(n)
    a2 = (alpha ** 2)[:, None]
    cos2 = (1.0 - u1) / (1.0 + (a2 - 1.0) * u1)
    cos_t = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sin_t = np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0))
    phi = 2.0 * np.pi * u2
    x = sin_t * np.cos(phi)
    y = sin_t * np.sin(phi)
    return (x[..., None] * t[:, None, :] + y[..., None] * b[:, None, :]
            + cos_t[..., None] * n[:, None, :])


def _smith_g(n_dot_l, n_dot_v, alpha):
    """Height-correlated Smith masking-shadowing for GGX."""
    a2 = alpha ** 2
    lv = n_dot_l * np.sqrt(a2 + (1.0 - a2) * n_dot_v ** 2)
    vl = n_dot_v * np.sqrt(a2 + (1.0 - a2) * n_dot_l ** 2)
    denom = lv + vl
    return np.where(denom > 0.0, 2.0 * n_dot_l * n_dot_v / np.maximum(denom, 1e-12), 0.0)


def shade_points(albedo, metallic, roughness, normals, view_dirs, env, mode, seeds):
    """Vectorized shading of N surface points; returns (N,3) radiance.

    `seeds` is one uint64 stream id per point (see sampling.derive_seeds);
    identical seeds give identical results regardless of batching.
    """
    albedo = np.atleast_2d(np.asarray(albedo, dtype=np.float64))
    metallic = np.atleast_1d(np.asarray(metallic, dtype=np.float64))
    roughness = np.atleast_1d(np.asarray(roughness, dtype=np.float64))
    n = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    v = np.atleast_2d(np.asarray(view_dirs, dtype=np.float64))
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    _check_unit(n, "normal")
    _check_unit(v, "view_dir")
    # front-facing flip
    ndv = np.sum(n * v, axis=-1)
    n = np.where(ndv[:, None] < 0.0, -n, n)
    ndv = np.abs(ndv)

    sc = env.sample_count
    if mode == "lambertian":
        if env.kind == "uniform":
            # the cosine-weighted estimator of a constant is exact
            return albedo * env.radiance
        u1 = hash_uniforms(seeds, sc, 0)
        u2 = hash_uniforms(seeds, sc, 1)
        dirs = _cosine_dirs(n, u1, u2)
        mean_l = env.lookup(dirs).mean(axis=1)
        return albedo * mean_l
    if mode != "full":
        raise InvalidParam(f"unknown shading mode {mode!r}")

    n_diff = sc // 2
    n_spec = sc - n_diff
    ndv = np.maximum(ndv, _MIN_NDOTV)
    alpha = np.maximum(roughness ** 2, _MIN_ALPHA)
    f0 = 0.04 * (1.0 - metallic[:, None]) + albedo * metallic[:, None]

    # diffuse term, cosine-weighted estimator
    if env.kind == "uniform":
        mean_l = np.broadcast_to(env.radiance, albedo.shape)
    else:
        u1 = hash_uniforms(seeds, n_diff, 0)
        u2 = hash_uniforms(seeds, n_diff, 1)
        mean_l = env.lookup(_cosine_dirs(n, u1, u2)).mean(axis=1)
    diffuse = (1.0 - metallic[:, None]) * albedo * mean_l

    # specular term, GGX NDF importance sampling
    u1 = hash_uniforms(seeds, n_spec, 2)
    u2 = hash_uniforms(seeds, n_spec, 3)
    h = _ggx_half_dirs(n, alpha, u1, u2)
    v_exp = v[:, None, :]
    vdh = np.sum(v_exp * h, axis=-1)
    l = 2.0 * vdh[..., None] * h - v_exp
    ndl = np.sum(n[:, None, :] * l, axis=-1)
    ndh = np.sum(n[:, None, :] * h, axis=-1)
    good = (ndl > 0.0) & (vdh > 0.0) & (ndh > 1e-8)
    g = _smith_g(np.maximum(ndl, 0.0), ndv[:, None], alpha[:, None])
    # weight = G * (v.h) / (n.v * n.h) for NDF-sampled half vectors
    w = np.where(good, g * vdh / (ndv[:, None] * np.maximum(ndh, 1e-12)), 0.0)
    fres = f0[:, None, :] + (1.0 - f0[:, None, :]) * (1.0 - np.clip(vdh, 0.0, 1.0))[..., None] ** 5
    radiance = env.lookup(l) if env.kind != "uniform" else np.broadcast_to(
        env.radiance, l.shape)
    spec = (w[..., None] * fres * radiance).mean(axis=1)
    return diffuse + spec


def shade_point(mat: MaterialSample, normal, view_dir, env: EnvironmentLight,
                mode="full", seed=0):
    """Shade a single surface point; see shade_points."""
    out = shade_points(mat.albedo[None, :], [mat.metallic], [mat.roughness],
                       np.asarray(normal, dtype=np.float64)[None, :],
                       np.asarray(view_dir, dtype=np.float64)[None, :],
                       env, mode, derive_seeds(env.seed, [seed]))
    return out[0]


def view_pixel_seeds(env_seed, view_index, resolution, mask=None):
    """Per-pixel shading seeds for one view of the bundle."""
    ids = np.arange(resolution * resolution, dtype=np.uint64).reshape(resolution, resolution)
    ids = ids + np.uint64(view_index * resolution * resolution)
    if mask is not None:
        ids = ids[mask]
    return derive_seeds(env_seed, ids.ravel())


def shade_gbuffer(gbuffer, materials, pose, env, mode, view_index, chunk=65536):
    """Shade one G-buffer view with materials sampled from UV maps.

    Returns (image (H,W,3) linear, alpha (H,W)). Background is black with
    zero alpha.
    """
    res = gbuffer.resolution
    img = np.zeros((res, res, 3))
    mask = gbuffer.mask
    if mask.any():
        uvs = gbuffer.uv[mask]
        alb = np.clip(sample_uv_map(materials.albedo, uvs), 0.0, 1.0)
        met = np.clip(sample_uv_map(materials.metallic, uvs), 0.0, 1.0)
        rou = np.clip(sample_uv_map(materials.roughness, uvs), 0.0, 1.0)
        nrm = gbuffer.normal[mask]
        pos = gbuffer.position[mask]
        vdir = pose.eye - pos
        vdir /= np.linalg.norm(vdir, axis=-1, keepdims=True)
        seeds = view_pixel_seeds(env.seed, view_index, res, mask)
        out = np.empty((len(seeds), 3))
        for s in range(0, len(seeds), chunk):
            sl = slice(s, s + chunk)
            out[sl] = shade_points(alb[sl], met[sl], rou[sl], nrm[sl], vdir[sl],
                                   env, mode, seeds[sl])
        img[mask] = out
    return img, mask.astype(np.float64)


def render_views(mesh, materials, bundle, env, mode="full", gbuffers=None):
    """Render shaded images of all 6 views; returns (images (6,H,W,3), alphas)."""
    from .raster import rasterize_view
    res = bundle.resolution
    images = np.zeros((6, res, res, 3))
    alphas = np.zeros((6, res, res))
    for i, pose in enumerate(bundle.poses):
        gb = gbuffers[i] if gbuffers is not None else rasterize_view(mesh, pose)
        images[i], alphas[i] = shade_gbuffer(gb, materials, pose, env, mode, i)
    return images, alphas


def render_albedo_views(mesh, materials, bundle, gbuffers=None):
    """Render unshaded albedo views (UV albedo sampled through the G-buffer)."""
    from .raster import rasterize_view
    res = bundle.resolution
    images = np.zeros((6, res, res, 3))
    alphas = np.zeros((6, res, res))
    for i, pose in enumerate(bundle.poses):
        gb = gbuffers[i] if gbuffers is not None else rasterize_view(mesh, pose)
        if gb.mask.any():
            images[i][gb.mask] = np.clip(sample_uv_map(materials.albedo, gb.uv[gb.mask]),
                                         0.0, 1.0)
        alphas[i] = gb.mask.astype(np.float64)
    return images, alphas
