"""Intrinsic decomposition of shaded views into material channels.

Two routes: a client for an external neural decomposer operating on the
six shaded views, and a built-in per-texel numerical fitter that inverts
the local shading model under a known environment light. The fitter runs
a coarse metallic x roughness grid search (albedo solved in closed form
per cell, exploiting that shading is linear in albedo per channel),
followed by coordinate-descent refinement.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .bake import BakeParams, view_weights
from .errors import MalformedResponse, NonfiniteInput, NoVisibleViews
from .sampling import bilinear_sample, derive_seeds
from .shade import EnvironmentLight, MaterialSample, shade_points, hash_uniforms, _cosine_dirs
from .wire import decode_png_b64, encode_png_b64, post_json

log = logging.getLogger(__name__)

GRID_STEPS = 9
REFINE_MAX_ITERS = 50
REFINE_TOL = 1e-4


@dataclass(frozen=True)
class TexelObservations:
    """Per-texel multi-view observations of shaded radiance.

    shaded: (T,V,3); view_dirs: (T,V,3) unit, surface-to-camera;
    normals: (T,3) unit; visible: (T,V) bool, at least one per texel.
    """

    shaded: np.ndarray
    view_dirs: np.ndarray
    normals: np.ndarray
    visible: np.ndarray

    def __len__(self):
        return self.shaded.shape[0]


@dataclass(frozen=True)
class DecompositionResult:
    """Albedo/metallic/roughness either as 6-view stacks or UV maps.

    For source="fitter" the arrays are UV maps and `valid` marks fitted
    texels (the rest await inpainting); for source="external" they are
    per-view image stacks (V,H,W[,3]) and `valid` is None.
    """

    albedo: np.ndarray
    metallic: np.ndarray
    roughness: np.ndarray
    source: str
    valid: np.ndarray | None = None


def decompose_external(endpoint, shaded_views, timeout=120.0) -> DecompositionResult:
    """Query an external decomposer with 6 shaded views."""
    shaded_views = np.asarray(shaded_views, dtype=np.float64)
    if shaded_views.shape[0] != 6:
        raise MalformedResponse("expected 6 shaded views")
    payload = {"views": [encode_png_b64(v, srgb=True) for v in shaded_views]}
    data = post_json(endpoint.rstrip("/") + "/decompose", payload, timeout=timeout)
    views = data.get("views")
    if not isinstance(views, list) or len(views) != 6:
        raise MalformedResponse(f"decomposer returned {0 if not views else len(views)} views")
    res = shaded_views.shape[1]
    albedo = np.empty((6, res, res, 3))
    metallic = np.empty((6, res, res))
    roughness = np.empty((6, res, res))
    for i, entry in enumerate(views):
        try:
            a = decode_png_b64(entry["albedo"], srgb=True)
            m = decode_png_b64(entry["metallic"], srgb=False)
            r = decode_png_b64(entry["roughness"], srgb=False)
        except (KeyError, TypeError) as e:
            raise MalformedResponse(f"view {i} missing channels: {e}") from e
        if a.shape[:2] != (res, res) or m.shape[:2] != (res, res):
            raise MalformedResponse(f"view {i} resolution mismatch")
        if a.ndim != 3:
            a = np.stack([a] * 3, axis=-1)
        if m.ndim == 3:
            m = m[..., 0]
        if r.ndim == 3:
            r = r[..., 0]
        albedo[i], metallic[i], roughness[i] = a, m, r
    for name, arr in (("albedo", albedo), ("metallic", metallic), ("roughness", roughness)):
        if arr.min() < 0.0 or arr.max() > 1.0:
            log.warning("external %s outside [0,1]; clamping", name)
    return DecompositionResult(albedo=np.clip(albedo, 0, 1), metallic=np.clip(metallic, 0, 1),
                               roughness=np.clip(roughness, 0, 1), source="external")


def irradiance_factor(normals, env: EnvironmentLight):
    """(1/pi) integral of L * max(0, n.w) over the hemisphere, per normal.

    Estimated by seeded cosine-weighted sampling (exact for uniform
    environments). normals: (N,3) -> (N,3) RGB factors.
    """
    n = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    if env.kind == "uniform":
        return np.broadcast_to(env.radiance, (n.shape[0], 3)).copy()
    # deterministic seeds from quantized normals
    q = np.round((n + 1.0) * 32767.5).astype(np.uint64)
    ids = q[:, 0] | (q[:, 1] << np.uint64(16)) | (q[:, 2] << np.uint64(32))
    seeds = derive_seeds(env.seed, ids)
    u1 = hash_uniforms(seeds, env.sample_count, 0)
    u2 = hash_uniforms(seeds, env.sample_count, 1)
    return env.lookup(_cosine_dirs(n, u1, u2)).mean(axis=1)


def _grid_cells():
    """(metallic, roughness) grid ordered so the diffuse explanation wins ties."""
    m = np.linspace(0.0, 1.0, GRID_STEPS)
    r = np.linspace(0.0, 1.0, GRID_STEPS)[::-1]
    mm, rr = np.meshgrid(m, r, indexing="ij")
    return mm.ravel(), rr.ravel()


def _predict_linear(metallic, roughness, normals, view_dirs, env, seeds):
    """c0 and slope of the per-channel linear map albedo -> radiance.

    All inputs flat over P points; returns (c0 (P,3), slope (P,3)).
    """
    zeros = np.zeros((len(normals), 3))
    ones = np.ones((len(normals), 3))
    c0 = shade_points(zeros, metallic, roughness, normals, view_dirs, env, "full", seeds)
    c1 = shade_points(ones, metallic, roughness, normals, view_dirs, env, "full", seeds)
    return c0, c1 - c0


def _solve_albedo_and_residual(obs, vis, c0, slope):
    """Least-squares albedo per channel given linear predictions.

    obs/c0/slope: (T,V,3); vis: (T,V). Returns (albedo (T,3), residual (T,)).
    """
    w = vis[..., None].astype(np.float64)
    num = (w * slope * (obs - c0)).sum(axis=1)
    den = (w * slope ** 2).sum(axis=1)
    albedo = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    albedo = np.clip(albedo, 0.0, 1.0)
    pred = c0 + slope * albedo[:, None, :]
    residual = (w * (pred - obs) ** 2).sum(axis=(1, 2))
    return albedo, residual


class _Objective:
    """Residual of the forward model for candidate (metallic, roughness)."""

    def __init__(self, obs: TexelObservations, env, view_seeds):
        self.obs = obs
        self.env = env
        t, v = obs.visible.shape
        self.flat_n = np.repeat(obs.normals[:, None, :], v, axis=1).reshape(-1, 3)
        self.flat_v = obs.view_dirs.reshape(-1, 3)
        self.flat_seeds = np.tile(view_seeds, t)
        self.t, self.v = t, v

    def __call__(self, metallic, roughness):
        """metallic/roughness: (T,) -> (albedo (T,3), residual (T,))."""
        m = np.repeat(metallic, self.v)
        r = np.repeat(roughness, self.v)
        c0, slope = _predict_linear(m, r, self.flat_n, self.flat_v, self.env,
                                    self.flat_seeds)
        c0 = c0.reshape(self.t, self.v, 3)
        slope = slope.reshape(self.t, self.v, 3)
        return _solve_albedo_and_residual(self.obs.shaded, self.obs.visible, c0, slope)


def fit_texels(obs: TexelObservations, env: EnvironmentLight, mode="full",
               view_seeds=None):
    """Fit materials for a batch of texels.

    Returns (albedo (T,3), metallic (T,), roughness (T,)).
    """
    if not np.all(np.isfinite(obs.shaded)):
        raise NonfiniteInput("non-finite shaded observation")
    if np.any(~obs.visible.any(axis=1)):
        raise NoVisibleViews("a texel has no visible views")
    t, v = obs.visible.shape
    if mode == "lambertian":
        factor = irradiance_factor(obs.normals, env)  # (T,3)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_view = obs.shaded / np.maximum(factor[:, None, :], 1e-12)
        w = obs.visible[..., None].astype(np.float64)
        albedo = (w * per_view).sum(axis=1) / w.sum(axis=1)
        return np.clip(albedo, 0.0, 1.0), np.zeros(t), np.ones(t)

    if view_seeds is None:
        view_seeds = derive_seeds(env.seed, np.arange(v))
    objective = _Objective(obs, env, view_seeds)

    grid_m, grid_r = _grid_cells()
    best_res = np.full(t, np.inf)
    best_m = np.zeros(t)
    best_r = np.ones(t)
    best_a = np.zeros((t, 3))
    for m_val, r_val in zip(grid_m, grid_r):
        a, res = objective(np.full(t, m_val), np.full(t, r_val))
        better = res < best_res - 1e-15  # strict: earlier (more diffuse) cell wins ties
        best_res = np.where(better, res, best_res)
        best_m = np.where(better, m_val, best_m)
        best_r = np.where(better, r_val, best_r)
        best_a = np.where(better[:, None], a, best_a)

    # coordinate-descent refinement; never worsens the objective
    step = np.full(t, 1.0 / (GRID_STEPS - 1) / 2.0)
    for _ in range(REFINE_MAX_ITERS):
        improved = np.zeros(t, dtype=bool)
        for dm, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            cand_m = np.clip(best_m + dm * step, 0.0, 1.0)
            cand_r = np.clip(best_r + dr * step, 0.0, 1.0)
            a, res = objective(cand_m, cand_r)
            better = res < best_res - REFINE_TOL * 1e-3
            best_res = np.where(better, res, best_res)
            best_m = np.where(better, cand_m, best_m)
            best_r = np.where(better, cand_r, best_r)
            best_a = np.where(better[:, None], a, best_a)
            improved |= better
        step = np.where(improved, step, step / 2.0)
        if step.max() < REFINE_TOL:
            break
    return best_a, best_m, best_r


def fit_texel(shaded, view_dirs, normal, visible, env, mode="full") -> MaterialSample:
    """Fit a single texel; see fit_texels."""
    obs = TexelObservations(
        shaded=np.asarray(shaded, dtype=np.float64)[None, ...],
        view_dirs=np.asarray(view_dirs, dtype=np.float64)[None, ...],
        normals=np.asarray(normal, dtype=np.float64)[None, :],
        visible=np.asarray(visible, dtype=bool)[None, :],
    )
    a, m, r = fit_texels(obs, env, mode)
    return MaterialSample(albedo=a[0], metallic=float(m[0]), roughness=float(r[0]))


def gather_observations(shaded_views, gbuffers, table, bundle,
                        params: BakeParams = BakeParams()):
    """Build TexelObservations for the table's valid texels.

    Visibility reuses the bake module's depth/angle rule. Returns
    (observations, texel_index (T,2)) with texels that have at least one
    visible view; the rest are left for inpainting.
    """
    shaded_views = np.asarray(shaded_views, dtype=np.float64)
    weights, pix = view_weights(gbuffers, table, bundle, params)
    sel_idx = np.argwhere(table.filled)
    visible = weights > 0.0  # (6,T)
    has_view = visible.any(axis=0)
    keep = np.nonzero(has_view)[0]
    t = len(keep)
    shaded = np.zeros((t, 6, 3))
    vdirs = np.zeros((t, 6, 3))
    positions = table.position[table.filled][keep]
    normals = table.normal[table.filled][keep]
    for i, pose in enumerate(bundle.poses):
        vis_i = visible[i][keep]
        if vis_i.any():
            p = pix[i][keep][vis_i]
            shaded[vis_i, i] = bilinear_sample(shaded_views[i], p[:, 0], p[:, 1])
        d = pose.eye - positions
        d /= np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
        vdirs[:, i] = d
    obs = TexelObservations(shaded=shaded, view_dirs=vdirs, normals=normals,
                            visible=visible[:, keep].T.copy())
    return obs, sel_idx[keep]


def decompose_fitter(shaded_views, gbuffers, table, bundle, env, mode="lambertian",
                     params: BakeParams = BakeParams(), chunk=4096) -> DecompositionResult:
    """Fit UV-space material maps texel by texel from the shaded views."""
    res = table.resolution
    albedo = np.zeros((res, res, 3))
    metallic = np.zeros((res, res))
    roughness = np.ones((res, res))
    valid = np.zeros((res, res), dtype=bool)
    obs, idx = gather_observations(shaded_views, gbuffers, table, bundle, params)
    if len(obs) == 0:
        return DecompositionResult(albedo=albedo, metallic=metallic, roughness=roughness,
                                   source="fitter", valid=valid)
    for s in range(0, len(obs), chunk):
        sub = TexelObservations(shaded=obs.shaded[s:s + chunk],
                                view_dirs=obs.view_dirs[s:s + chunk],
                                normals=obs.normals[s:s + chunk],
                                visible=obs.visible[s:s + chunk])
        a, m, r = fit_texels(sub, env, mode)
        rows = idx[s:s + chunk, 0]
        cols = idx[s:s + chunk, 1]
        albedo[rows, cols] = a
        metallic[rows, cols] = m
        roughness[rows, cols] = r
        valid[rows, cols] = True
    return DecompositionResult(albedo=albedo, metallic=metallic, roughness=roughness,
                               source="fitter", valid=valid)
