"""End-to-end batch pipeline: propose, embed, train, encode, index, score.

Every stage is deterministic given (config, seed); the worker-thread count
only parallelizes independent per-image work, so artifacts are byte-stable
across thread counts.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import encode, evaluation, index as index_mod
from .embed import (
    DESCRIPTOR_DIM,
    PATCH_SIDE,
    DescriptorMeta,
    DescriptorSet,
    embed_patches,
    save_descriptors,
)
from .errors import StageError
from .proposals import Patch, ProposalConfig, augment_rotations, propose
from .raster import Image, read_pgm, resize_bilinear

THREADS_ENV_VAR = "KCNN_THREADS"


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by the train / encode / pipeline commands."""

    n_proposals: int = 127
    pca_dim: int = 128
    gmm_components: int = 64
    rotations: bool = True
    use_proposals: bool = True
    normalization: str = "improved"
    whiten: bool = False
    seed: int = 42
    threads: int | None = None
    nms_iou: float = 0.5
    scales: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_proposals < 1:
            raise ValueError(f"proposal count must be >= 1, got {self.n_proposals}")
        if not 1 <= self.pca_dim <= DESCRIPTOR_DIM:
            raise ValueError(f"pca dim must lie in 1..{DESCRIPTOR_DIM}, got {self.pca_dim}")
        if self.gmm_components < 1:
            raise ValueError(f"component count must be >= 1, got {self.gmm_components}")
        if self.normalization not in encode.NORMALIZATION_POLICIES:
            raise ValueError(f"unknown normalization policy {self.normalization!r}")

    def proposal_config(self) -> ProposalConfig:
        return ProposalConfig(
            n=self.n_proposals, scales=self.scales, nms_iou=self.nms_iou,
            include_rotations=self.rotations,
        )


_BOOL_VALUES = {"1": True, "true": True, "on": True, "0": False, "false": False, "off": False}


def _parse_bool(raw: str) -> bool:
    if raw.lower() not in _BOOL_VALUES:
        raise ValueError(f"expected a boolean, got {raw!r}")
    return _BOOL_VALUES[raw.lower()]


def config_from_file(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Overlay key=value lines (# comments allowed) onto a base config."""
    cfg = base or PipelineConfig()
    updates: dict[str, object] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in ("n_proposals", "pca_dim", "gmm_components", "seed", "threads"):
            updates[key] = int(raw)
        elif key in ("rotations", "use_proposals", "whiten"):
            updates[key] = _parse_bool(raw)
        elif key == "normalization":
            updates[key] = raw
        elif key == "nms_iou":
            updates[key] = float(raw)
        elif key == "scales":
            updates[key] = tuple(int(v) for v in raw.split(",") if v)
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    return replace(cfg, **updates)


def resolve_threads(requested: int | None) -> int:
    """Worker count: KCNN_THREADS environment overrides, else flag, else all cores."""
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        return max(1, int(env))
    if requested is not None:
        return max(1, requested)
    return os.cpu_count() or 1


@contextmanager
def stage(name: str):
    """Tag exceptions with the pipeline stage they came from."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc


def full_frame_patch(img: Image) -> Patch:
    return Patch(x=0, y=0, w=img.width, h=img.height, objectness=0.0)


def describe_image(image_id: str, img: Image, cfg: PipelineConfig) -> DescriptorSet:
    """Proposal + rotation + embedding stage for one image.

    With proposals disabled the single full-frame patch is used, so the
    rotations-off variant reduces exactly to the global whole-image
    descriptor path.
    """
    if cfg.use_proposals:
        patches = propose(img, cfg.proposal_config())
    else:
        patches = [full_frame_patch(img)]

    rasters: list[np.ndarray] = []
    meta: list[DescriptorMeta] = []
    for patch_id, p in enumerate(patches):
        if cfg.rotations:
            stack = augment_rotations(img, p)
            for rotation_index in range(stack.shape[0]):
                rasters.append(stack[rotation_index])
                meta.append(
                    DescriptorMeta(patch_id, p.x, p.y, p.w, p.h, rotation_index, p.objectness)
                )
        else:
            window = img.pixels[p.y : p.y + p.h, p.x : p.x + p.w]
            rasters.append(resize_bilinear(window, PATCH_SIDE, PATCH_SIDE))
            meta.append(DescriptorMeta(patch_id, p.x, p.y, p.w, p.h, 0, p.objectness))
    values = embed_patches(np.stack(rasters))
    return DescriptorSet(image_id=image_id, meta=meta, values=values)


def load_corpus(corpus_dir: str | Path) -> list[tuple[str, Image]]:
    """All PGM images of a directory as (id, image), sorted by id."""
    corpus_dir = Path(corpus_dir)
    paths = sorted(corpus_dir.glob("*.pgm"))
    if not paths:
        raise ValueError(f"no .pgm images found in {corpus_dir}")
    return [(p.stem, read_pgm(p)) for p in paths]


@dataclass
class PipelineArtifacts:
    index_path: Path
    model_path: Path
    descriptor_dir: Path
    image_count: int
    descriptor_count: int


def run_pipeline(corpus_dir: str | Path, out_dir: str | Path, cfg: PipelineConfig) -> PipelineArtifacts:
    """Describe a corpus, train the codebook on it, encode, and persist an index."""
    out_dir = Path(out_dir)
    desc_dir = out_dir / "descriptors"
    desc_dir.mkdir(parents=True, exist_ok=True)
    workers = resolve_threads(cfg.threads)

    with stage("corpus"):
        corpus = load_corpus(corpus_dir)

    with stage("embed"):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(
                pool.map(lambda item: describe_image(item[0], item[1], cfg), corpus)
            )
        for dset in sets:
            save_descriptors(desc_dir / f"{dset.image_id}.kdesc", dset)

    with stage("train"):
        all_values = np.vstack([dset.values for dset in sets])
        pca = encode.pca_train(all_values, cfg.pca_dim, whiten=cfg.whiten)
        reduced = [encode.pca_project(pca, dset.values) for dset in sets]
        gmm = encode.gmm_train(np.vstack(reduced), cfg.gmm_components, cfg.seed)
        model_path = out_dir / "model.kmdl"
        encode.save_model(model_path, pca, gmm)

    with stage("encode"):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(
                pool.map(lambda xs: encode.aggregate(gmm, xs, cfg.normalization), reduced)
            )
        entries = [
            index_mod.IndexEntry(image_id=dset.image_id, values=fv.values)
            for dset, fv in zip(sets, vectors)
        ]

    with stage("index"):
        idx = index_mod.build(entries)
        index_path = out_dir / "index.kidx"
        index_mod.save(index_path, idx)

    return PipelineArtifacts(
        index_path=index_path,
        model_path=model_path,
        descriptor_dir=desc_dir,
        image_count=len(corpus),
        descriptor_count=int(all_values.shape[0]),
    )


def evaluate_index(
    idx: index_mod.Index, gt: evaluation.GroundTruth, mode: str
) -> tuple[list[tuple[str, float]], float]:
    """Run every ground-truth query against the index.

    mode "map" follows the junk-aware protocol with the query dropped from
    its own ranked list; mode "top4" keeps the query and counts it as
    relevant.
    """
    if mode not in ("map", "top4"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    rows: list[tuple[str, float]] = []
    for query_id in gt.queries():
        if query_id not in idx:
            raise ValueError(f"unknown query id {query_id!r}: not present in index")
        ranked = [image_id for image_id, _ in index_mod.search(idx, idx.vector(query_id), len(idx))]
        labels = gt.labels_for(query_id)
        if mode == "map":
            ranked = [image_id for image_id in ranked if image_id != query_id]
            rows.append((query_id, evaluation.average_precision(ranked, labels)))
        else:
            rows.append(
                (query_id, evaluation.top4_score(ranked, labels, query_id, count_query_itself=True))
            )
    overall = float(np.mean([value for _, value in rows]))
    return rows, overall
