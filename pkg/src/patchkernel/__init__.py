"""Patch-based kernel-aggregated image retrieval toolkit."""

from .embed import cosine, embed_image_global, embed_patch
from .encode import FisherVector, GMMModel, PCAModel, aggregate, fv_contribution
from .index import Index, IndexEntry, build, search
from .pipeline import PipelineConfig, run_pipeline
from .raster import Image, read_pgm, write_pgm

__version__ = "0.1.0"

__all__ = [
    "FisherVector",
    "GMMModel",
    "Image",
    "Index",
    "IndexEntry",
    "PCAModel",
    "PipelineConfig",
    "aggregate",
    "build",
    "cosine",
    "embed_image_global",
    "embed_patch",
    "fv_contribution",
    "read_pgm",
    "run_pipeline",
    "search",
    "write_pgm",
    "__version__",
]
