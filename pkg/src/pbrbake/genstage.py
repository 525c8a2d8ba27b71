"""Pluggable multi-channel multi-view generation stage boundary.

Consumes depth control plus prompts and produces candidate channel sets
(shaded + albedo, optionally metallic/roughness). Supports an HTTP
endpoint, an offline directory dump with the same schema, and a
procedural mock generator whose three perturbation knobs (albedo tint,
baked-in lighting residual, pixel noise) emulate the failure modes of
real generators.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedResponse, Unreachable
from .imgio import load_png, save_png
from .sampling import derive_seeds, hash_uniforms
from .shade import render_albedo_views, render_views
from .wire import decode_png_b64, encode_png_b64, post_json

log = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 2


@dataclass(frozen=True)
class GenerationRequest:
    depth_maps: np.ndarray            # (6,H,W) normalized to [0,1]
    depth_sidecars: tuple             # 6 dicts with dmin/dmax
    text_prompt: str
    image_prompt: np.ndarray | None = None   # front-view shaded image
    candidate_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if np.asarray(self.depth_maps).shape[0] != 6:
            raise MalformedResponse("exactly 6 depth maps required")
        if self.candidate_count < 1:
            raise MalformedResponse("candidate_count must be >= 1")


@dataclass(frozen=True)
class MultiViewChannelSet:
    """Six-view image stacks; single-channel maps stored one-channel."""

    shaded: np.ndarray                 # (6,H,W,3) linear [0,1]
    albedo: np.ndarray                 # (6,H,W,3)
    metallic: np.ndarray | None = None   # (6,H,W)
    roughness: np.ndarray | None = None  # (6,H,W)
    alpha: np.ndarray | None = None      # (6,H,W)
    provenance: str = "external"

    def __post_init__(self):
        ref = self.shaded.shape
        if ref[0] != 6:
            raise MalformedResponse("channel sets must have 6 views")
        for name in ("albedo", "metallic", "roughness", "alpha"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[:3] != ref[:3]:
                raise MalformedResponse(f"{name} resolution/view count mismatch")

    @property
    def resolution(self):
        return self.shaded.shape[1]


def inflate_channel(image):
    """Expand a single-channel map to three identical channels (wire format)."""
    img = np.asarray(image)
    if img.ndim != 2 and not (img.ndim == 3 and img.shape[-1] == 1):
        raise MalformedResponse("inflate_channel expects a single-channel image")
    if img.ndim == 3:
        img = img[..., 0]
    return np.stack([img] * 3, axis=-1)


def collapse_channel(image):
    """Inverse of inflate_channel; requires the three channels to agree."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise MalformedResponse("collapse_channel expects a three-channel image")
    if not (np.array_equal(img[..., 0], img[..., 1])
            and np.array_equal(img[..., 0], img[..., 2])):
        raise MalformedResponse("channels disagree; not an inflated single-channel map")
    return img[..., 0].copy()


def save_candidates(directory, candidates, bundle, prompt="", seeds=None):
    """Write candidate sets in the manifest directory layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    channels = ["shaded", "albedo"]
    if candidates and candidates[0].metallic is not None:
        channels += ["metallic", "roughness"]
    manifest = {
        "bundle": bundle.to_manifest(),
        "resolution": candidates[0].resolution if candidates else 0,
        "prompt": prompt,
        "channels": channels,
        "candidate_count": len(candidates),
        "seeds": list(seeds) if seeds is not None else list(range(len(candidates))),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for k, cand in enumerate(candidates):
        for i in range(6):
            vdir = directory / f"candidate_{k}" / f"view_{i}"
            vdir.mkdir(parents=True, exist_ok=True)
            save_png(vdir / "shaded.png", cand.shaded[i], srgb=True,
                     alpha=None if cand.alpha is None else cand.alpha[i])
            save_png(vdir / "albedo.png", cand.albedo[i], srgb=True,
                     alpha=None if cand.alpha is None else cand.alpha[i])
            if cand.metallic is not None:
                save_png(vdir / "metallic.png", inflate_channel(cand.metallic[i]), srgb=False)
            if cand.roughness is not None:
                save_png(vdir / "roughness.png", inflate_channel(cand.roughness[i]), srgb=False)


def _load_directory(directory, req: GenerationRequest):
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise Unreachable(f"no manifest.json in {directory}")
    manifest = json.loads(mpath.read_text())
    res = manifest.get("resolution")
    count = manifest.get("candidate_count", req.candidate_count)
    channels = manifest.get("channels", ["shaded", "albedo"])
    sets = []
    for k in range(count):
        shaded = np.empty((6, res, res, 3))
        albedo = np.empty((6, res, res, 3))
        alpha = np.ones((6, res, res))
        metallic = np.empty((6, res, res)) if "metallic" in channels else None
        roughness = np.empty((6, res, res)) if "roughness" in channels else None
        for i in range(6):
            vdir = directory / f"candidate_{k}" / f"view_{i}"
            for chan in channels:
                path = vdir / f"{chan}.png"
                if not path.exists():
                    raise MalformedResponse(f"missing {path.relative_to(directory)}")
                img, a = load_png(path, srgb=chan in ("shaded", "albedo"))
                if img.shape[:2] != (res, res):
                    raise MalformedResponse(f"{path.name} has wrong resolution")
                if chan == "shaded":
                    shaded[i] = img if img.ndim == 3 else np.stack([img] * 3, -1)
                    if a is not None:
                        alpha[i] = a
                elif chan == "albedo":
                    albedo[i] = img if img.ndim == 3 else np.stack([img] * 3, -1)
                elif chan == "metallic":
                    metallic[i] = collapse_channel(img) if img.ndim == 3 else img
                else:
                    roughness[i] = collapse_channel(img) if img.ndim == 3 else img
        sets.append(MultiViewChannelSet(shaded=shaded, albedo=albedo, metallic=metallic,
                                        roughness=roughness, alpha=alpha,
                                        provenance="external"))
    return sets


def _request_http(endpoint, req: GenerationRequest, concurrency, timeout):
    def fetch(k):
        payload = {
            "text_prompt": req.text_prompt,
            "seed": int(req.seed) + k,
            "depth_maps": [encode_png_b64(d, srgb=False) for d in req.depth_maps],
            "depth_sidecars": list(req.depth_sidecars),
        }
        if req.image_prompt is not None:
            payload["image_prompt"] = encode_png_b64(req.image_prompt, srgb=True)
        data = post_json(endpoint.rstrip("/") + "/generate", payload, timeout=timeout)
        views = data.get("views")
        if not isinstance(views, list) or len(views) != 6:
            raise MalformedResponse("generator returned wrong view count")
        shaded, albedo = [], []
        for v in views:
            try:
                shaded.append(decode_png_b64(v["shaded"], srgb=True))
                albedo.append(decode_png_b64(v["albedo"], srgb=True))
            except (KeyError, TypeError) as e:
                raise MalformedResponse(f"generator view missing channel: {e}") from e
        shaded = np.stack(shaded)
        albedo = np.stack(albedo)
        if shaded.shape[1] != shaded.shape[2]:
            raise MalformedResponse("generator returned non-square views")
        return MultiViewChannelSet(shaded=shaded, albedo=albedo, provenance="external")

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(fetch, k) for k in range(req.candidate_count)]
        return [f.result() for f in futures]  # ordered by candidate index


def request_external(endpoint, req: GenerationRequest, concurrency=DEFAULT_CONCURRENCY,
                     timeout=300.0):
    """Fetch candidate sets from a directory dump or an HTTP generator."""
    if isinstance(endpoint, (str, Path)) and not str(endpoint).startswith(("http://", "https://")):
        sets = _load_directory(endpoint, req)
    else:
        sets = _request_http(str(endpoint), req, concurrency, timeout)
    if len(sets) < req.candidate_count:
        raise MalformedResponse(
            f"expected {req.candidate_count} candidates, got {len(sets)}")
    return sets[: req.candidate_count]


@dataclass(frozen=True)
class Perturbation:
    """Mock-generator failure knobs (identity = perfect generator)."""

    albedo_tint: tuple = (1.0, 1.0, 1.0)
    lighting_residual: float = 0.0
    noise_sigma: float = 0.0


def mock_generate(mesh, materials, bundle, env, perturbation: Perturbation = Perturbation(),
                  seed=0, mode="lambertian", gbuffers=None) -> MultiViewChannelSet:
    """Procedural stand-in for the generation stage.

    Shaded views are rendered from the ground-truth materials; albedo
    views start from ground truth and are degraded by the perturbation:
    tinted, blended with `lighting_residual` of the shaded image
    (emulating baked-in lighting), and given Gaussian pixel noise.
    """
    if gbuffers is None:
        from .raster import rasterize_view
        gbuffers = [rasterize_view(mesh, pose) for pose in bundle.poses]
    shaded, alpha = render_views(mesh, materials, bundle, env, mode=mode, gbuffers=gbuffers)
    albedo, _ = render_albedo_views(mesh, materials, bundle, gbuffers=gbuffers)
    tint = np.asarray(perturbation.albedo_tint, dtype=np.float64)
    albedo = albedo * tint
    lr = float(perturbation.lighting_residual)
    albedo = (1.0 - lr) * albedo + lr * shaded
    sigma = float(perturbation.noise_sigma)
    if sigma > 0.0:
        flat_ids = np.arange(albedo.size // 3, dtype=np.uint64)
        seeds = derive_seeds(seed, flat_ids)
        u1 = hash_uniforms(seeds, 3, 10)
        u2 = hash_uniforms(seeds, 3, 11)
        # Box-Muller; deterministic under fixed seed
        gauss = np.sqrt(-2.0 * np.log(np.maximum(u1, 1e-12))) * np.cos(2.0 * np.pi * u2)
        albedo = albedo + sigma * gauss.reshape(albedo.shape)
    mask3 = alpha[..., None]
    albedo = np.clip(albedo, 0.0, 1.0) * mask3
    return MultiViewChannelSet(shaded=shaded, albedo=albedo, alpha=alpha, provenance="mock")
