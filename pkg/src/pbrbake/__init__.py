"""Mesh texturing toolkit: multi-view rendering, intrinsic decomposition,
UV back-projection baking, inpainting, and judge-based selection."""

from .bake import BakeParams, MaterialTextureSet, backproject, bake_pbr
from .camera import CameraPose, ViewBundle, standard_bundle
from .errors import PbrBakeError
from .inpaint import nearest_inpaint, telea_inpaint, upsample2x
from .mesh import Mesh, load_mesh, normalize, save_obj
from .pipeline import PipelineConfig, evaluate, psnr, run_pipeline
from .raster import GBuffer, TexelTable, build_texel_table, rasterize_view
from .shade import EnvironmentLight, MaterialSample, make_environment, uniform_environment

__version__ = "0.1.0"

__all__ = [
    "BakeParams", "MaterialTextureSet", "backproject", "bake_pbr",
    "CameraPose", "ViewBundle", "standard_bundle",
    "PbrBakeError",
    "nearest_inpaint", "telea_inpaint", "upsample2x",
    "Mesh", "load_mesh", "normalize", "save_obj",
    "PipelineConfig", "evaluate", "psnr", "run_pipeline",
    "GBuffer", "TexelTable", "build_texel_table", "rasterize_view",
    "EnvironmentLight", "MaterialSample", "make_environment", "uniform_environment",
    "__version__",
]
