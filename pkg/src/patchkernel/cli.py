"""Batch command-line surface.

Every subcommand exits 0 on success; on failure it prints one machine
parsable line `stage: message` to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import encode, evaluation, index as index_mod, proposals, synth
from .embed import load_descriptors, save_descriptors
from .errors import StageError
from .pipeline import (
    PipelineConfig,
    config_from_file,
    describe_image,
    evaluate_index,
    load_corpus,
    run_pipeline,
    stage,
)
from .raster import read_pgm


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value config file")
    parser.add_argument("--n", type=int, help="proposals per image (default 127)")
    parser.add_argument("--pca-dim", type=int, help="PCA output dimension (default 128)")
    parser.add_argument("--components", type=int, help="GMM component count (default 64)")
    parser.add_argument("--rotations", choices=["on", "off"], help="8-way patch rotation (default on)")
    parser.add_argument(
        "--global-baseline", action="store_true",
        help="bypass proposals: one full-frame descriptor per image",
    )
    parser.add_argument("--policy", choices=list(encode.NORMALIZATION_POLICIES),
                        help="aggregation normalization (default improved)")
    parser.add_argument("--whiten", action="store_true", help="enable PCA whitening")
    parser.add_argument("--nms-iou", type=float, help="proposal NMS threshold (default 0.5)")
    parser.add_argument("--scales", type=str, help="comma-separated window sides")
    parser.add_argument("--seed", type=int, help="training seed (default 42)")
    parser.add_argument("--threads", type=int, help="worker threads (default all cores)")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config is not None:
        cfg = config_from_file(args.config, cfg)
    updates: dict[str, object] = {}
    if args.n is not None:
        updates["n_proposals"] = args.n
    if args.pca_dim is not None:
        updates["pca_dim"] = args.pca_dim
    if args.components is not None:
        updates["gmm_components"] = args.components
    if args.rotations is not None:
        updates["rotations"] = args.rotations == "on"
    if args.global_baseline:
        updates["use_proposals"] = False
        updates.setdefault("rotations", False)
    if args.policy is not None:
        updates["normalization"] = args.policy
    if args.whiten:
        updates["whiten"] = True
    if args.nms_iou is not None:
        updates["nms_iou"] = args.nms_iou
    if args.scales is not None:
        updates["scales"] = tuple(int(v) for v in args.scales.split(",") if v)
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.threads is not None:
        updates["threads"] = args.threads
    return replace(cfg, **updates)


def _cmd_synth(args: argparse.Namespace) -> None:
    with stage("synth"):
        ids = synth.generate_corpus(args.out, n_base=args.n_base, seed=args.seed)
    print(f"wrote {len(ids)} images and groundtruth.csv to {args.out}")


def _cmd_propose(args: argparse.Namespace) -> None:
    with stage("propose"):
        img = read_pgm(args.image)
        cfg = proposals.ProposalConfig(
            n=args.n,
            nms_iou=args.nms_iou,
            scales=tuple(int(v) for v in args.scales.split(",")) if args.scales else None,
        )
        found = proposals.propose(img, cfg)
        proposals.write_patches_csv(args.out, found)
    print(f"wrote {len(found)} patches to {args.out}")


def _cmd_embed(args: argparse.Namespace) -> None:
    with stage("embed"):
        img = read_pgm(args.image)
        cfg = _config_from_args(args)
        if args.image_id is not None:
            image_id = args.image_id
        else:
            image_id = Path(args.image).stem
        dset = describe_image(image_id, img, cfg)
        save_descriptors(args.out, dset)
    print(f"wrote {dset.values.shape[0]} descriptors to {args.out}")


def _cmd_train(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    with stage("corpus"):
        corpus = load_corpus(args.corpus)
    with stage("embed"):
        sets = [describe_image(image_id, img, cfg) for image_id, img in corpus]
        values = np.vstack([dset.values for dset in sets])
    with stage("train"):
        pca = encode.pca_train(values, cfg.pca_dim, whiten=cfg.whiten)
        reduced = np.vstack([encode.pca_project(pca, dset.values) for dset in sets])
        gmm = encode.gmm_train(reduced, cfg.gmm_components, cfg.seed)
        encode.save_model(args.out, pca, gmm)
    print(f"trained on {values.shape[0]} descriptors; model written to {args.out}")


def _cmd_encode(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    with stage("encode"):
        pca, gmm = encode.load_model(args.model)
        entries = []
        for desc_path in args.descriptors:
            dset = load_descriptors(desc_path)
            reduced = encode.pca_project(pca, dset.values)
            fv = encode.aggregate(gmm, reduced, cfg.normalization)
            entries.append(index_mod.IndexEntry(image_id=dset.image_id, values=fv.values))
        idx = index_mod.build(entries)
        index_mod.save(args.out, idx)
    print(f"encoded {len(entries)} images to {args.out}")


def _cmd_index(args: argparse.Namespace) -> None:
    with stage("index"):
        entries: list[index_mod.IndexEntry] = []
        for path in args.inputs:
            part = index_mod.load(path)
            entries.extend(
                index_mod.IndexEntry(image_id=i, values=part.vector(i)) for i in part.ids
            )
        idx = index_mod.build(entries)
        index_mod.save(args.out, idx)
    print(f"indexed {len(idx)} images to {args.out}")


def _cmd_search(args: argparse.Namespace) -> None:
    with stage("search"):
        idx = index_mod.load(args.index)
        queries = index_mod.load(args.queries)
        lines = ["query_id,rank,image_id,score"]
        for query_id in queries.ids:
            results = index_mod.search(idx, queries.vector(query_id), args.k)
            for rank, (image_id, score) in enumerate(results, start=1):
                lines.append(f"{query_id},{rank},{image_id},{score:.6f}")
        text = "\n".join(lines) + "\n"
        if args.out is not None:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)


def _cmd_eval(args: argparse.Namespace) -> None:
    with stage("eval"):
        idx = index_mod.load(args.index)
        gt = evaluation.load_ground_truth(args.gt, count_query_itself=args.mode == "top4")
        rows, overall = evaluate_index(idx, gt, args.mode)
        evaluation.write_metric_report(args.out, rows, overall, mode=args.mode)
    label = "mAP" if args.mode == "map" else "mean top-4"
    print(f"{label} = {overall:.6f} over {len(rows)} queries; report at {args.out}")


def _cmd_sensitivity(args: argparse.Namespace) -> None:
    with stage("sensitivity"):
        corpus = load_corpus(args.corpus)
        if args.grid:
            grid = [float(v) for v in args.grid.split(",")]
            if args.kind == "translate":
                grid = [int(v) for v in grid]
        else:
            grid = evaluation.default_grid(args.kind, min(img.width for _, img in corpus))
        curve = evaluation.sensitivity_study(corpus, args.kind, grid)
        evaluation.write_curve_csv(args.out, curve)
    print(f"wrote {len(curve.grid)}-point {args.kind} curve to {args.out}")


def _cmd_pipeline(args: argparse.Namespace) -> None:
    cfg = _config_from_args(args)
    artifacts = run_pipeline(args.corpus, args.out, cfg)
    print(
        f"pipeline complete: {artifacts.image_count} images, "
        f"{artifacts.descriptor_count} descriptors, index at {artifacts.index_path}"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchkernel",
        description="Patch-based kernel-aggregated image retrieval toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-base", type=int, default=20)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("propose", help="detect object-like patches in one image")
    p.add_argument("image", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=127)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--scales", type=str)
    p.set_defaults(func=_cmd_propose)

    p = sub.add_parser("embed", help="compute patch descriptors for one image")
    p.add_argument("image", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--image-id", type=str)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("train", help="train the PCA+GMM codebook on a corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="aggregate descriptor files into an index")
    p.add_argument("descriptors", type=Path, nargs="+")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("index", help="merge index files")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("search", help="rank index entries for each query vector")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("eval", help="score an index against ground truth")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--mode", choices=["map", "top4"], default="map")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sensitivity", help="transform-sensitivity curve over a corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--kind", choices=["translate", "scale", "rotate"], required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--grid", type=str, help="comma-separated parameter values")
    p.add_argument("--embedder", choices=["global"], default="global")
    p.set_defaults(func=_cmd_sensitivity)

    p = sub.add_parser("pipeline", help="embed, train, encode, and index a corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"{exc.stage}: {exc.message}".replace("\n", " "), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"{args.command}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
