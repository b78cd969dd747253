import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from shelfalign import outputs
from shelfalign.alignment import outcome_from_dict, render_alignment_table
from shelfalign.config import PipelineConfig, load_config
from shelfalign.detection import save_overlay
from shelfalign.errors import ShelfAlignError
from shelfalign.evaluation import (
    aggregate_metrics,
    compliance_metrics,
    default_sprites,
    detection_metrics,
    detections_from_dicts,
    ground_truth_to_dict,
    load_ground_truth,
    load_layout,
    render_metrics_table,
    synth_shelf,
)
from shelfalign.features import import_features
from shelfalign.imaging import load_image
from shelfalign.ism import save_vote_matrix
from shelfalign.logging_setup import configure_logging
from shelfalign.planogram import load_reference_with_images
from shelfalign.search import (
    FEATURE_SUFFIX,
    IMAGE_SUFFIXES,
    detect_products,
    find_model_file,
    load_models,
    report_to_dict,
    run_compliance,
)
from shelfalign.types import FeatureSet, GrayImage, Metrics, VoteMatrix

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


def _require(path: Optional[str], what: str, directory: bool = False) -> Optional[Path]:
    if path is None:
        return None
    resolved = Path(path)
    exists = resolved.is_dir() if directory else resolved.is_file()
    if not exists:
        raise FileNotFoundError(f"{what} not found: {resolved}")
    return resolved


def _resolve_config(args: argparse.Namespace, iou_field: str = "nms_threshold") -> PipelineConfig:
    config = load_config(args.config)
    return config.with_overrides(**{
        "alpha_decay": getattr(args, "alpha_decay", None),
        "max_iterations": getattr(args, "max_iters", None),
        "sigma": getattr(args, "sigma", None),
        "seed": getattr(args, "seed", None),
        iou_field: getattr(args, "iou_thresh", None),
    })


def _shelf_features(args: argparse.Namespace, shelf: GrayImage) -> Optional[FeatureSet]:
    path = _require(args.shelf_features, "shelf feature file")
    if path is None:
        return None
    features = import_features(path, source_size=(shelf.width, shelf.height))
    if (features.source_width, features.source_height) != (shelf.width, shelf.height):
        raise ValueError(
            f"{path}: features were computed on a {features.source_width}x{features.source_height} image, "
            f"the shelf is {shelf.width}x{shelf.height}"
        )
    return features


def _model_ids_in(models_dir: Path) -> List[str]:
    suffixes = (FEATURE_SUFFIX,) + IMAGE_SUFFIXES
    return sorted({p.stem for p in models_dir.iterdir() if p.is_file() and p.suffix.lower() in suffixes})


def _vote_writer(votes_dir: Path, prefix: str = ""):
    def write(iteration: int, votes: VoteMatrix) -> None:
        name = f"{prefix}iter{iteration:02d}_{votes.object_id}.png" if iteration else f"{prefix}{votes.object_id}.png"
        save_vote_matrix(votes, votes_dir / name)
    return write


def cmd_detect(args: argparse.Namespace) -> int:
    shelf_path = _require(args.shelf, "shelf image")
    models_dir = _require(args.models_dir, "models directory", directory=True)
    planogram_path = _require(args.planogram, "planogram file")
    config = _resolve_config(args)

    image_paths: Dict[str, Path] = {}
    if planogram_path is not None:
        reference, image_paths = load_reference_with_images(planogram_path)
        object_ids = [entry.group_type for entry in reference.entries]
    elif models_dir is not None:
        object_ids = _model_ids_in(models_dir)
    else:
        raise ValueError("detect needs --planogram or --models-dir to know which products to look for")

    shelf = load_image(shelf_path)
    models = load_models(object_ids, models_dir, image_paths)
    detections, votes = detect_products(shelf, models, config, shelf_features=_shelf_features(args, shelf))

    out = Path(args.out)
    stem = shelf_path.stem
    outputs.write_json(out / f"{stem}.detections.json", {
        "shelf": shelf_path.name,
        "detections": [d.to_dict() for d in detections],
        "config": config.model_dump(mode="json"),
    })
    if args.overlay:
        save_overlay(shelf, detections, out / f"{stem}.overlay.png")
    if args.dump_votes:
        writer = _vote_writer(out / "votes", f"{stem}_")
        for matrix in votes:
            writer(0, matrix)
    logger.info(f"Wrote {len(detections)} detections for {shelf_path.name} to {out}")
    return EXIT_OK


def cmd_comply(args: argparse.Namespace) -> int:
    shelf_path = _require(args.shelf, "shelf image")
    planogram_path = _require(args.planogram, "planogram file")
    models_dir = _require(args.models_dir, "models directory", directory=True)
    config = _resolve_config(args)

    reference, image_paths = load_reference_with_images(planogram_path)
    shelf = load_image(shelf_path)
    models = load_models([entry.group_type for entry in reference.entries], models_dir, image_paths)

    out = Path(args.out)
    stem = shelf_path.stem
    on_votes = _vote_writer(out / "votes", f"{stem}_") if args.dump_votes else None
    report = run_compliance(shelf, models, reference, config, shelf_features=_shelf_features(args, shelf),
                            on_votes=on_votes)

    outputs.write_json(out / f"{stem}.report.json", report_to_dict(report, config))
    outputs.write_text(out / f"{stem}.alignment.txt", render_alignment_table(report.outcome))
    if args.overlay:
        save_overlay(shelf, report.detections, out / f"{stem}.overlay.png")
    print(f"mu={float(report.final_mu):.4f}")
    return EXIT_OK


def _metrics_for(stem: str, input_dir: Path, config: PipelineConfig) -> Tuple[Metrics, Optional[Metrics]]:
    gt = load_ground_truth(input_dir / f"{stem}.gt.json")
    report_path = input_dir / f"{stem}.report.json"
    detections_path = input_dir / f"{stem}.detections.json"
    if report_path.is_file():
        raw = json.loads(report_path.read_text(encoding="utf-8"))
    elif detections_path.is_file():
        raw = json.loads(detections_path.read_text(encoding="utf-8"))
    else:
        raise FileNotFoundError(f"no {stem}.report.json or {stem}.detections.json next to {stem}.gt.json")

    detection = detection_metrics(detections_from_dicts(raw["detections"]), gt, config.eval_iou_threshold)
    compliance = None
    if "alignment" in raw and gt.compliance_labels:
        compliance = compliance_metrics(outcome_from_dict(raw["alignment"]), gt.compliance_labels)
    return detection, compliance


def cmd_eval(args: argparse.Namespace) -> int:
    input_dir = _require(args.input_dir, "input directory", directory=True)
    config = _resolve_config(args, iou_field="eval_iou_threshold")
    stems = sorted(p.name[:-len(".gt.json")] for p in input_dir.glob("*.gt.json"))
    if not stems:
        raise FileNotFoundError(f"no *.gt.json files in {input_dir}")

    out = Path(args.out)
    detection_rows: List[Tuple[str, Metrics]] = []
    compliance_rows: List[Tuple[str, Metrics]] = []
    for stem in stems:
        detection, compliance = _metrics_for(stem, input_dir, config)
        detection_rows.append((stem, detection))
        payload: Dict[str, Any] = {"shelf": stem, "detection": detection.to_dict()}
        if compliance is not None:
            compliance_rows.append((stem, compliance))
            payload["compliance"] = compliance.to_dict()
        outputs.write_json(out / f"{stem}.metrics.json", payload)

    aggregate: Dict[str, Any] = {
        "shelves": len(stems),
        "iou_threshold": config.eval_iou_threshold,
        "detection": aggregate_metrics(m for _, m in detection_rows).to_dict(),
    }
    table = "detection\n" + render_metrics_table(detection_rows + [("all", aggregate_metrics(m for _, m in detection_rows))])
    if compliance_rows:
        aggregate["compliance"] = aggregate_metrics(m for _, m in compliance_rows).to_dict()
        table += "\ncompliance\n" + render_metrics_table(
            compliance_rows + [("all", aggregate_metrics(m for _, m in compliance_rows))]
        )
    outputs.write_json(out / "aggregate.json", aggregate)
    outputs.write_text(out / "metrics.txt", table)
    print(table, end="")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    layout_path = _require(args.layout, "layout file")
    models_dir = _require(args.models_dir, "models directory", directory=True)
    layout = load_layout(layout_path)
    if args.seed is not None:
        layout = layout.model_copy(update={"seed": args.seed})

    ids = list(dict.fromkeys([g.id for g in layout.groups] + [f.id for f in layout.perturbations.foreign if f.id]))
    sprites: Dict[str, GrayImage] = default_sprites(ids, layout.seed)
    if models_dir is not None:
        for object_id in ids:
            path = find_model_file(models_dir, object_id)
            if path is not None and path.suffix != FEATURE_SUFFIX:
                sprites[object_id] = load_image(path)

    image, gt = synth_shelf(layout, sprites)
    out = Path(args.out)
    stem = layout.shelf_id
    outputs.write_png(out / f"{stem}.png", image.pixels)
    outputs.write_json(out / f"{stem}.gt.json", ground_truth_to_dict(gt))
    for object_id in ids:
        outputs.write_png(out / "models" / f"{object_id}.png", sprites[object_id].pixels)
    outputs.write_json(out / f"{stem}.reference.json", {
        "shelf_id": layout.shelf_id,
        "products": [
            {"id": entry.group_type, "image": f"models/{entry.group_type}.png", "quantity": entry.quantity}
            for entry in gt.planogram.entries
        ],
    })
    logger.info(f"Wrote synthetic shelf {stem} with {len(gt.boxes)} products to {out}")
    return EXIT_OK


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config JSON (default: $SHELFALIGN_CONFIG or built-ins)")
    parser.add_argument("--sigma", type=float, help="vote Gaussian sigma in pixels")
    parser.add_argument("--iou-thresh", type=float, help="NMS overlap threshold")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--shelf-features", help="precomputed shelf feature file (.shft) used instead of extraction")
    parser.add_argument("--overlay", action=argparse.BooleanOptionalAction, default=True,
                        help="write an overlay PNG of the detections")
    parser.add_argument("--dump-votes", action="store_true", help="write vote matrices as PNGs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shelfalign", description="Shelf product detection and planogram compliance")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (default: $SHELFALIGN_LOG_LEVEL or INFO)")
    parser.add_argument("--log-format", choices=("json", "text"), default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    detect = sub.add_parser("detect", help="detect products once at full thresholds")
    detect.add_argument("--shelf", required=True)
    detect.add_argument("--planogram")
    detect.add_argument("--models-dir")
    detect.add_argument("--out", required=True)
    _add_pipeline_flags(detect)
    detect.set_defaults(handler=cmd_detect)

    comply = sub.add_parser("comply", help="run the iterative compliance check")
    comply.add_argument("--shelf", required=True)
    comply.add_argument("--planogram", required=True)
    comply.add_argument("--models-dir")
    comply.add_argument("--out", required=True)
    comply.add_argument("--alpha-decay", type=float)
    comply.add_argument("--max-iters", type=int)
    _add_pipeline_flags(comply)
    comply.set_defaults(handler=cmd_comply)

    evaluate = sub.add_parser("eval", help="score detections and reports against ground truth")
    evaluate.add_argument("--input-dir", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--config")
    evaluate.add_argument("--iou-thresh", type=float, help="detection-to-ground-truth IoU threshold")
    evaluate.set_defaults(handler=cmd_eval)

    synth = sub.add_parser("synth", help="render a synthetic shelf with ground truth")
    synth.add_argument("--layout", required=True)
    synth.add_argument("--models-dir", help="product images to use instead of generated sprites")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int)
    synth.set_defaults(handler=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT

    configure_logging(args.log_level, json_output=args.log_format == "json")
    try:
        return args.handler(args)
    except (ShelfAlignError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        logger.exception(f"shelfalign {args.command} failed")
        return EXIT_INTERNAL
