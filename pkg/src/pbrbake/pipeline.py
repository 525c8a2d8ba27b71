"""End-to-end orchestration: render depth -> generate -> decompose ->
select -> bake -> inpaint -> upsample -> relight.

Every stage persists its artifacts plus a manifest under its own
subdirectory of the run output directory, so runs are inspectable and
resumable per stage: a stage re-executes when its manifest is missing or
any earlier stage re-executed.
"""

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import agent, bake, genstage, inpaint, intrinsic, mesh as meshmod, raster, shade
from .camera import ViewBundle, standard_bundle
from .errors import DimensionMismatch, EmptyIntersection, InvalidParam, PbrBakeError
from .imgio import load_png, save_depth, save_png
from .shade import EnvironmentLight, uniform_environment, make_environment

log = logging.getLogger(__name__)

STAGES = ("views", "generate", "decompose", "select", "bake", "inpaint",
          "upsample", "relight")

RELIGHT_ENVIRONMENTS = ("gradient", "sunset")


@dataclass
class PipelineConfig:
    mesh_path: str = ""
    output_dir: str = "out"
    description: str = ""
    texture_resolution: int = 512
    view_resolution: int = 768          # generation/view resolution
    camera_distance: float = 2.0
    fov_y: float = 40.0
    generator: str = "mock"             # "mock", directory, or http endpoint
    decomposer: str = "fitter"          # "fitter" or http endpoint
    scoring_strategy: str = "each_set"
    scoring_runs: int = 5
    best_of_n: int = 1                  # optionally 3
    mllm_base_url: str | None = None
    mllm_model: str | None = None
    bake_depth_epsilon: float = bake.DEFAULT_DEPTH_EPSILON
    bake_angle_cutoff_deg: float = bake.DEFAULT_ANGLE_CUTOFF_DEG
    bake_weight_exponent: float = bake.DEFAULT_WEIGHT_EXPONENT
    inpaint_radius: int = 5
    inpaint_method: str = "telea"       # or "nearest"
    upsample_method: str = "lanczos3"
    shading_mode: str = "lambertian"    # forward model for mock/fitter
    environment: str = "uniform"        # "uniform" | "gradient" | "sunset"
    environment_radiance: tuple = (1.0, 1.0, 1.0)
    environment_samples: int = 64
    seed: int = 0
    # mock-generator settings
    mock_material: str = "gradient"     # "gradient" | "checker" | "constant"
    mock_perturbations: list = field(default_factory=list)  # one dict per candidate

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path_or_text, **overrides):
        text = path_or_text
        if os.path.exists(str(path_or_text)):
            text = Path(path_or_text).read_text()
        data = json.loads(text)
        data.update(overrides)
        if "environment_radiance" in data:
            data["environment_radiance"] = tuple(data["environment_radiance"])
        return cls(**data)

    def bake_params(self):
        return bake.BakeParams(depth_epsilon=self.bake_depth_epsilon,
                               angle_cutoff_deg=self.bake_angle_cutoff_deg,
                               weight_exponent=self.bake_weight_exponent)

    def environment_light(self) -> EnvironmentLight:
        if self.environment == "uniform":
            return uniform_environment(self.environment_radiance,
                                       self.environment_samples, self.seed)
        return make_environment(self.environment, sample_count=self.environment_samples,
                                seed=self.seed)


@dataclass
class RunArtifacts:
    output_dir: Path
    stage_status: dict
    final_maps: dict
    selection: dict | None
    relit: list


class _RunLock:
    """One pipeline run per output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PbrBakeError(f"output dir is locked by another run: {self.path}")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _stage_dir(out_dir, stage):
    return Path(out_dir) / f"{STAGES.index(stage):02d}_{stage}"


def _manifest_path(stage_dir):
    return stage_dir / "manifest.json"


def _write_manifest(stage_dir, stage, outputs, extra=None):
    data = {"stage": stage, "status": "done", "outputs": sorted(map(str, outputs)),
            "written_at": time.time()}
    if extra:
        data.update(extra)
    _manifest_path(stage_dir).write_text(json.dumps(data, indent=2))


def _stage_done(stage_dir):
    return _manifest_path(stage_dir).exists()


class PipelineRun:
    """Holds in-memory state while executing/resuming stages in order."""

    def __init__(self, config: PipelineConfig, mesh=None):
        self.cfg = config
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.status = {}
        self.dirty = False
        self.mesh = mesh
        self.bundle = None
        self.gbuffers = None
        self.table = None
        self.env = config.environment_light()
        self.candidates = []
        self.decomposed = []
        self.selection = None
        self.chosen_candidate = 0
        self.selected_albedo_views = None
        self.baked = None
        self.inpainted = None
        self.final = None
        self.relit = []

    # -- stage execution ----------------------------------------------------

    def execute(self):
        self.cfg.to_json(self.out / "config.json")
        for stage in STAGES:
            sdir = _stage_dir(self.out, stage)
            if _stage_done(sdir) and not self.dirty:
                getattr(self, f"_load_{stage}")(sdir)
                self.status[stage] = "cached"
                log.info("stage %s: cached", stage)
            else:
                self.dirty = True
                sdir.mkdir(parents=True, exist_ok=True)
                getattr(self, f"_run_{stage}")(sdir)
                self.status[stage] = "computed"
                log.info("stage %s: computed", stage)
        final_dir = _stage_dir(self.out, "upsample")
        return RunArtifacts(
            output_dir=self.out, stage_status=dict(self.status),
            final_maps={k: final_dir / f"{k}.png" for k in ("albedo", "metallic", "roughness")},
            selection=self.selection, relit=list(self.relit),
        )

    # -- views --------------------------------------------------------------

    def _prepare_geometry(self):
        if self.mesh is None:
            self.mesh = meshmod.load_mesh(self.cfg.mesh_path)
        self.mesh = meshmod.normalize(self.mesh)
        self.bundle = standard_bundle(self.cfg.view_resolution, self.cfg.camera_distance,
                                      self.cfg.fov_y)
        self.gbuffers = [raster.rasterize_view(self.mesh, p) for p in self.bundle.poses]
        self.table = raster.build_texel_table(self.mesh, self.cfg.texture_resolution)

    def _run_views(self, sdir):
        self._prepare_geometry()
        self.bundle.save_manifest(sdir / "bundle.json")
        outputs = [sdir / "bundle.json"]
        for i, gb in enumerate(self.gbuffers):
            save_depth(sdir / f"depth_{i}.png", gb.depth)
            save_png(sdir / f"mask_{i}.png", gb.mask.astype(np.float64), srgb=False)
            outputs += [sdir / f"depth_{i}.png", sdir / f"mask_{i}.png"]
        np.savez_compressed(
            sdir / "gbuffers.npz",
            **{f"{k}_{i}": getattr(gb, k) for i, gb in enumerate(self.gbuffers)
               for k in ("depth", "normal", "uv", "position", "mask")})
        np.savez_compressed(sdir / "texel_table.npz", position=self.table.position,
                            normal=self.table.normal, valid=self.table.valid,
                            filled=self.table.filled)
        outputs += [sdir / "gbuffers.npz", sdir / "texel_table.npz"]
        _write_manifest(sdir, "views", outputs)

    def _load_views(self, sdir):
        self._prepare_geometry()  # cheap relative to later stages; arrays identical

    # -- generate -----------------------------------------------------------

    def _candidate_count(self):
        return max(1, self.cfg.best_of_n)

    def _perturbation(self, k):
        entries = self.cfg.mock_perturbations
        if k < len(entries):
            return genstage.Perturbation(**entries[k])
        return genstage.Perturbation()

    def mock_materials(self):
        from .testlab import procedural_material_maps
        from .shade import MaterialSample
        spec = self.cfg.mock_material
        if spec == "constant":
            spec = MaterialSample(albedo=np.array([0.5, 0.5, 0.5]), metallic=0.0,
                                  roughness=1.0)
        else:
            spec = (spec,)
        return procedural_material_maps(spec, self.cfg.texture_resolution)

    def _run_generate(self, sdir):
        n = self._candidate_count()
        if self.cfg.generator == "mock":
            truth = self.mock_materials()
            self.candidates = [
                genstage.mock_generate(self.mesh, truth, self.bundle, self.env,
                                       self._perturbation(k), seed=self.cfg.seed + k,
                                       mode=self.cfg.shading_mode, gbuffers=self.gbuffers)
                for k in range(n)
            ]
        else:
            depth = np.stack([gb.depth for gb in self.gbuffers])
            finite = np.isfinite(depth)
            norm = np.zeros_like(depth)
            sidecars = []
            for i in range(6):
                d = depth[i]
                f = finite[i]
                dmin = float(d[f].min()) if f.any() else 0.0
                dmax = float(d[f].max()) if f.any() else 1.0
                norm[i][f] = (d[f] - dmin) / max(dmax - dmin, 1e-12)
                sidecars.append({"dmin": dmin, "dmax": dmax})
            req = genstage.GenerationRequest(
                depth_maps=norm, depth_sidecars=tuple(sidecars),
                text_prompt=self.cfg.description, candidate_count=n, seed=self.cfg.seed)
            self.candidates = genstage.request_external(self.cfg.generator, req)
        genstage.save_candidates(sdir, self.candidates, self.bundle,
                                 prompt=self.cfg.description,
                                 seeds=[self.cfg.seed + k for k in range(n)])
        # genstage writes the candidate manifest; merge stage fields into it
        self._merge_stage_manifest(sdir, "generate", {"written_at": time.time()})

    def _merge_stage_manifest(self, sdir, stage, extra):
        data = json.loads(_manifest_path(sdir).read_text())
        data.update({"stage": stage, "status": "done"})
        data.update(extra)
        _manifest_path(sdir).write_text(json.dumps(data, indent=2))

    def _load_generate(self, sdir):
        n = self._candidate_count()
        req = genstage.GenerationRequest(
            depth_maps=np.zeros((6, 1, 1)), depth_sidecars=({},) * 6,
            text_prompt=self.cfg.description, candidate_count=n, seed=self.cfg.seed)
        self.candidates = genstage.request_external(sdir, req)

    # -- decompose ----------------------------------------------------------

    def _views_from_uv_map(self, uv_map):
        """Sample a fitted UV map through each view's G-buffer."""
        from .sampling import sample_uv_map
        res = self.bundle.resolution
        chans = 3 if uv_map.ndim == 3 else 1
        shape = (6, res, res, 3) if chans == 3 else (6, res, res)
        out = np.zeros(shape)
        for i, gb in enumerate(self.gbuffers):
            if gb.mask.any():
                out[i][gb.mask] = sample_uv_map(uv_map, gb.uv[gb.mask])
        return out

    def _run_decompose(self, sdir):
        self.decomposed = []
        for k, cand in enumerate(self.candidates):
            if self.cfg.decomposer == "fitter":
                result = intrinsic.decompose_fitter(
                    cand.shaded, self.gbuffers, self.table, self.bundle, self.env,
                    mode=self.cfg.shading_mode, params=self.cfg.bake_params())
                entry = {
                    "albedo_views": self._views_from_uv_map(result.albedo),
                    "metallic_views": self._views_from_uv_map(result.metallic),
                    "roughness_views": self._views_from_uv_map(result.roughness),
                    "uv": result,
                }
            else:
                result = intrinsic.decompose_external(self.cfg.decomposer, cand.shaded)
                entry = {
                    "albedo_views": result.albedo,
                    "metallic_views": result.metallic,
                    "roughness_views": result.roughness,
                    "uv": None,
                }
            self.decomposed.append(entry)
            np.savez_compressed(sdir / f"candidate_{k}.npz",
                                albedo=entry["albedo_views"],
                                metallic=entry["metallic_views"],
                                roughness=entry["roughness_views"])
        _write_manifest(sdir, "decompose",
                        [sdir / f"candidate_{k}.npz" for k in range(len(self.candidates))])

    def _load_decompose(self, sdir):
        self.decomposed = []
        for k in range(len(self.candidates)):
            data = np.load(sdir / f"candidate_{k}.npz")
            self.decomposed.append({
                "albedo_views": data["albedo"], "metallic_views": data["metallic"],
                "roughness_views": data["roughness"], "uv": None,
            })

    # -- select -------------------------------------------------------------

    def _client(self):
        return agent.MLLMClient(base_url=self.cfg.mllm_base_url,
                                model=self.cfg.mllm_model,
                                audit_path=self.out / "mllm_audit.jsonl")

    def _run_select(self, sdir):
        client = self._client() if self.cfg.mllm_base_url or os.environ.get(
            "PBRBAKE_MLLM_BASE_URL") else None
        per_candidate = []
        for k, (cand, dec) in enumerate(zip(self.candidates, self.decomposed)):
            if client is None:
                chosen_views, record = cand.albedo, None
            else:
                records = agent.score_candidates(
                    cand.albedo, dec["albedo_views"], self.cfg.description,
                    self.cfg.scoring_strategy, client, runs=self.cfg.scoring_runs)
                record = agent.select_albedo(records)
                chosen_views = (cand.albedo if record.chosen == "generated"
                                else dec["albedo_views"])
            per_candidate.append((chosen_views, record))
        if len(self.candidates) > 1 and client is not None:
            tuples = [
                (views, dec["metallic_views"], dec["roughness_views"])
                for (views, _), dec in zip(per_candidate, self.decomposed)
            ]
            self.chosen_candidate, bon_scores = agent.best_of_n(
                tuples, self.cfg.description, client, runs=self.cfg.scoring_runs)
        else:
            self.chosen_candidate, bon_scores = 0, []
        self.selected_albedo_views = per_candidate[self.chosen_candidate][0]
        record = per_candidate[self.chosen_candidate][1]
        self.selection = {
            "chosen_candidate": self.chosen_candidate,
            "best_of_n_scores": bon_scores,
            "albedo_selection": record.to_dict() if record else None,
        }
        (sdir / "selection.json").write_text(json.dumps(self.selection, indent=2,
                                                        sort_keys=True))
        np.savez_compressed(sdir / "selected_albedo.npz",
                            albedo=self.selected_albedo_views)
        _write_manifest(sdir, "select", [sdir / "selection.json",
                                         sdir / "selected_albedo.npz"])

    def _load_select(self, sdir):
        self.selection = json.loads((sdir / "selection.json").read_text())
        self.chosen_candidate = self.selection["chosen_candidate"]
        self.selected_albedo_views = np.load(sdir / "selected_albedo.npz")["albedo"]

    # -- bake ---------------------------------------------------------------

    def _run_bake(self, sdir):
        dec = self.decomposed[self.chosen_candidate]
        self.baked = bake.bake_pbr(self.selected_albedo_views, dec["metallic_views"],
                                   dec["roughness_views"], self.gbuffers, self.table,
                                   self.bundle, self.cfg.bake_params())
        self._save_maps(sdir, self.baked)
        _write_manifest(sdir, "bake", [sdir / "maps.npz"])

    def _save_maps(self, sdir, maps: bake.MaterialTextureSet):
        np.savez_compressed(sdir / "maps.npz", albedo=maps.albedo, metallic=maps.metallic,
                            roughness=maps.roughness, coverage=maps.coverage)
        save_png(sdir / "albedo.png", maps.albedo, srgb=True)
        save_png(sdir / "metallic.png", maps.metallic, srgb=False)
        save_png(sdir / "roughness.png", maps.roughness, srgb=False)
        save_png(sdir / "coverage.png", maps.coverage.astype(np.float64), srgb=False)

    def _load_maps(self, sdir):
        data = np.load(sdir / "maps.npz")
        return bake.MaterialTextureSet(
            albedo=data["albedo"], metallic=data["metallic"], roughness=data["roughness"],
            coverage=data["coverage"].astype(bool), resolution=data["albedo"].shape[0])

    def _load_bake(self, sdir):
        self.baked = self._load_maps(sdir)

    # -- inpaint ------------------------------------------------------------

    def _run_inpaint(self, sdir):
        maps = self.baked
        hole = self.table.filled & ~maps.coverage
        fill = (inpaint.telea_inpaint if self.cfg.inpaint_method == "telea"
                else inpaint.nearest_inpaint)
        kwargs = {"radius": self.cfg.inpaint_radius} if self.cfg.inpaint_method == "telea" else {}
        if hole.any():
            self.inpainted = maps.with_maps(
                albedo=fill(maps.albedo, hole, **kwargs),
                metallic=fill(maps.metallic, hole, **kwargs),
                roughness=fill(maps.roughness, hole, **kwargs),
                coverage=maps.coverage | hole)
        else:
            self.inpainted = maps
        self._save_maps(sdir, self.inpainted)
        _write_manifest(sdir, "inpaint", [sdir / "maps.npz"])

    def _load_inpaint(self, sdir):
        self.inpainted = self._load_maps(sdir)

    # -- upsample -----------------------------------------------------------

    def _run_upsample(self, sdir):
        maps = self.inpainted
        res2 = maps.resolution * 2
        cov2 = np.repeat(np.repeat(maps.coverage, 2, axis=0), 2, axis=1)
        self.final = bake.MaterialTextureSet(
            albedo=inpaint.upsample2x(maps.albedo, self.cfg.upsample_method),
            metallic=inpaint.upsample2x(maps.metallic, self.cfg.upsample_method),
            roughness=inpaint.upsample2x(maps.roughness, self.cfg.upsample_method),
            coverage=cov2, resolution=res2)
        self._save_maps(sdir, self.final)
        _write_manifest(sdir, "upsample", [sdir / "maps.npz"])

    def _load_upsample(self, sdir):
        self.final = self._load_maps(sdir)

    # -- relight ------------------------------------------------------------

    def _run_relight(self, sdir):
        self.relit = []
        outputs = []
        for name in RELIGHT_ENVIRONMENTS:
            env = make_environment(name, sample_count=self.cfg.environment_samples,
                                   seed=self.cfg.seed)
            images, alphas = shade.render_views(self.mesh, self.final, self.bundle, env,
                                                mode="full", gbuffers=self.gbuffers)
            path = sdir / f"relit_{name}.png"
            save_png(path, np.clip(images[0], 0.0, 1.0), srgb=True, alpha=alphas[0])
            self.relit.append(path)
            outputs.append(path)
        _write_manifest(sdir, "relight", outputs)

    def _load_relight(self, sdir):
        self.relit = [_stage_dir(self.out, "relight") / f"relit_{n}.png"
                      for n in RELIGHT_ENVIRONMENTS]


def run_pipeline(config: PipelineConfig, mesh=None) -> RunArtifacts:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _RunLock(out):
        return PipelineRun(config, mesh=mesh).execute()


# ---------------------------------------------------------------------------
# evaluation


PSNR_CAP_DB = 99.0


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB over masked pixels (data range 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch("psnr inputs differ in shape")
    if mask is not None:
        a, b = a[mask], b[mask]
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * np.log10(mse))


def _masked_ssim(a, b, mask):
    from skimage.metrics import structural_similarity

    if a.ndim == 3:
        vals = [_masked_ssim(a[..., c], b[..., c], mask) for c in range(a.shape[2])]
        return float(np.mean(vals))
    _, smap = structural_similarity(a, b, data_range=1.0, full=True)
    return float(smap[mask].mean())


def evaluate(result: bake.MaterialTextureSet, truth: bake.MaterialTextureSet):
    """PSNR/SSIM per channel over the intersection of coverage masks."""
    if result.resolution != truth.resolution:
        raise DimensionMismatch("texture resolutions differ")
    inter = result.coverage & truth.coverage
    if not inter.any():
        raise EmptyIntersection("coverage masks do not overlap")
    out = {"coverage_fraction": float(result.coverage.sum() / max(1, truth.coverage.sum()))}
    for name in ("albedo", "metallic", "roughness"):
        r = getattr(result, name)
        t = getattr(truth, name)
        out[f"psnr_{name}"] = psnr(r, t, inter)
        out[f"ssim_{name}"] = _masked_ssim(r, t, inter)
    return out
