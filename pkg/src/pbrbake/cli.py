"""Command-line interface.

Every subcommand accepts a JSON config file plus individual overrides;
exit codes distinguish configuration (2), file I/O (3), network (4), and
data-validation (5) failures.
"""

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import bake as bakemod, inpaint as inpaintmod, raster
from .camera import standard_bundle
from .errors import (DegenerateMesh, DimensionMismatch, InvalidParam, InvalidVector,
                     MalformedResponse, MissingUVs, NonfiniteInput, ParseError,
                     PbrBakeError, Timeout, TransportError, Unreachable)
from .imgio import load_png, save_depth, save_png
from .mesh import load_mesh, normalize
from .pipeline import PipelineConfig, PipelineRun, evaluate, run_pipeline

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NETWORK = 4
EXIT_VALIDATION = 5

_NETWORK_ERRORS = (Timeout, Unreachable, TransportError)
_CONFIG_ERRORS = (InvalidParam, InvalidVector, json.JSONDecodeError, TypeError)
_VALIDATION_ERRORS = (ParseError, MissingUVs, DegenerateMesh, DimensionMismatch,
                      MalformedResponse, NonfiniteInput, PbrBakeError)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _NETWORK_ERRORS as e:
            click.echo(f"network error: {e}", err=True)
            sys.exit(EXIT_NETWORK)
        except _CONFIG_ERRORS as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except FileNotFoundError as e:
            click.echo(f"io error: {e}", err=True)
            sys.exit(EXIT_IO)
        except _VALIDATION_ERRORS as e:
            click.echo(f"validation error: {e}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as e:
            click.echo(f"io error: {e}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


def _load_config(config_path, overrides):
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if config_path:
        return PipelineConfig.from_json(config_path, **overrides)
    return PipelineConfig(**overrides)


_common = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON pipeline config; flags override its fields."),
    click.option("--mesh", "mesh_path", type=click.Path(), default=None),
    click.option("--output-dir", type=click.Path(), default=None),
    click.option("--texture-resolution", type=int, default=None),
    click.option("--view-resolution", type=int, default=None),
    click.option("--seed", type=int, default=None),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, default=False)
def main(verbose):
    """Bake PBR texture maps for untextured meshes from multi-view images."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


def _stage_runner(config_path, overrides, stages):
    cfg = _load_config(config_path, overrides)
    run = PipelineRun(cfg)
    run.cfg.to_json(Path(cfg.output_dir) / "config.json")
    from .pipeline import STAGES, _stage_dir, _stage_done
    for stage in STAGES:
        sdir = _stage_dir(run.out, stage)
        if stage in stages or not _stage_done(sdir):
            sdir.mkdir(parents=True, exist_ok=True)
            getattr(run, f"_run_{stage}")(sdir)
            click.echo(f"stage {stage}: computed -> {sdir}")
        else:
            getattr(run, f"_load_{stage}")(sdir)
        if stage == stages[-1]:
            break
    return run


@main.command("render-views")
@common_options
@_guarded
def render_views_cmd(config_path, **overrides):
    """Rasterize the six-view depth/normal/UV buffers for a mesh."""
    run = _stage_runner(config_path, overrides, ["views"])
    click.echo(f"wrote view buffers for {len(run.gbuffers)} cameras")


@main.command("generate")
@common_options
@click.option("--generator", default=None,
              help='"mock", a directory dump, or an HTTP endpoint.')
@click.option("--best-of-n", type=int, default=None)
@_guarded
def generate_cmd(config_path, **overrides):
    """Produce candidate multi-view shaded/albedo image sets."""
    run = _stage_runner(config_path, overrides, ["generate"])
    click.echo(f"generated {len(run.candidates)} candidate set(s)")


@main.command("decompose")
@common_options
@click.option("--decomposer", default=None, help='"fitter" or an HTTP endpoint.')
@_guarded
def decompose_cmd(config_path, **overrides):
    """Split shaded views into albedo/metallic/roughness."""
    run = _stage_runner(config_path, overrides, ["decompose"])
    click.echo(f"decomposed {len(run.decomposed)} candidate set(s)")


@main.command("select")
@common_options
@click.option("--scoring-strategy", default=None,
              type=click.Choice(["once", "each_view", "each_set"]))
@click.option("--scoring-runs", type=int, default=None)
@click.option("--mllm-base-url", default=None)
@_guarded
def select_cmd(config_path, **overrides):
    """Score albedo sources with the vision-language judge and select."""
    run = _stage_runner(config_path, overrides, ["select"])
    click.echo(json.dumps(run.selection, indent=2, sort_keys=True))


@main.command("bake")
@common_options
@_guarded
def bake_cmd(config_path, **overrides):
    """Back-project selected views into UV texture maps."""
    run = _stage_runner(config_path, overrides, ["bake"])
    cov = float(run.baked.coverage.mean())
    click.echo(f"baked maps at {run.baked.resolution}px, coverage {cov:.3f}")


@main.command("inpaint")
@common_options
@click.option("--inpaint-method", default=None, type=click.Choice(["telea", "nearest"]))
@click.option("--inpaint-radius", type=int, default=None)
@_guarded
def inpaint_cmd(config_path, **overrides):
    """Fill unbaked texels by fast-marching inpainting."""
    run = _stage_runner(config_path, overrides, ["inpaint"])
    click.echo(f"inpainted maps at {run.inpainted.resolution}px")


@main.command("relight")
@common_options
@_guarded
def relight_cmd(config_path, **overrides):
    """Render the textured mesh under the bundled environment maps."""
    run = _stage_runner(config_path, overrides, ["upsample", "relight"])
    for path in run.relit:
        click.echo(f"wrote {path}")


@main.command("run")
@common_options
@click.option("--generator", default=None)
@click.option("--decomposer", default=None)
@click.option("--scoring-strategy", default=None,
              type=click.Choice(["once", "each_view", "each_set"]))
@click.option("--best-of-n", type=int, default=None)
@click.option("--mllm-base-url", default=None)
@_guarded
def run_cmd(config_path, **overrides):
    """Execute the full pipeline (resumes completed stages)."""
    cfg = _load_config(config_path, overrides)
    artifacts = run_pipeline(cfg)
    for stage, status in artifacts.stage_status.items():
        click.echo(f"stage {stage}: {status}")
    for name, path in artifacts.final_maps.items():
        click.echo(f"{name}: {path}")


@main.command("evaluate")
@click.option("--result", "result_path", type=click.Path(), required=True,
              help="maps.npz produced by the bake/inpaint/upsample stages.")
@click.option("--truth", "truth_path", type=click.Path(), required=True)
@_guarded
def evaluate_cmd(result_path, truth_path):
    """Compare two texture-map archives (PSNR/SSIM over shared coverage)."""

    def load(path):
        data = np.load(path)
        return bakemod.MaterialTextureSet(
            albedo=data["albedo"], metallic=data["metallic"],
            roughness=data["roughness"], coverage=data["coverage"].astype(bool),
            resolution=data["albedo"].shape[0])

    metrics = evaluate(load(result_path), load(truth_path))
    click.echo(json.dumps(metrics, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
