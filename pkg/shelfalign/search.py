"""Focused iterative search: detect, form, align, then relax thresholds inside unresolved regions."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from shelfalign.alignment import align, outcome_to_dict
from shelfalign.config import ExtractorSettings, PipelineConfig
from shelfalign.detection import find_empty_and_unknown, fit_box, footprint_fraction, suppress
from shelfalign.errors import StackingConstraintError
from shelfalign.features import extract_features, import_features
from shelfalign.imaging import image_size, load_image, roi_pixel_mask
from shelfalign.ism import build_vote_matrix, extract_centers, restrict_votes, scale_factor
from shelfalign.matching import match_features, matching_threshold
from shelfalign.planogram import form_planogram, planogram_to_dict
from shelfalign.types import (
    AlignmentOutcome,
    BoundingBox,
    CandidateCenter,
    ComplianceLabel,
    ComplianceReport,
    DetectedObject,
    FeatureSet,
    GrayImage,
    IterationRecord,
    Planogram,
    ProductModel,
    RoiMask,
    RoiPolarity,
    VoteMatrix,
)

logger = logging.getLogger(__name__)

ModelSource = Union[GrayImage, FeatureSet]
VoteSink = Callable[[int, VoteMatrix], None]

FEATURE_SUFFIX = ".shft"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class IterationState:
    alpha: float = 1.0
    iteration: int = 0
    mu_history: List[Fraction] = field(default_factory=list)
    kept_detections: List[DetectedObject] = field(default_factory=list)
    roi: RoiMask = field(default_factory=RoiMask)


@dataclass(frozen=True)
class DetectionPass:
    """Output of one extract-match-vote-detect pass."""

    detections: Tuple[DetectedObject, ...]
    new_detections: int
    votes: Tuple[VoteMatrix, ...]


def prepare_models(models: Sequence[Tuple[str, ModelSource]],
                   params: Optional[ExtractorSettings] = None) -> List[ProductModel]:
    params = params or ExtractorSettings()
    prepared = []
    for object_id, source in models:
        if isinstance(source, FeatureSet):
            features = source
        else:
            features = extract_features(source, params)
        if len(features) == 0:
            logger.warning(f"Model {object_id} yields no features; it cannot be detected")
        prepared.append(ProductModel(object_id, features.source_width, features.source_height, features))
    return prepared


def find_model_file(models_dir: Path, object_id: str,
                    suffixes: Sequence[str] = (FEATURE_SUFFIX,) + IMAGE_SUFFIXES) -> Optional[Path]:
    for suffix in suffixes:
        candidate = models_dir / f"{object_id}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def model_image_size(object_id: str, models_dir: Optional[Path],
                     image_paths: Mapping[str, Path]) -> Optional[Tuple[int, int]]:
    """Size of the model image next to a feature file, or the one the reference planogram names."""
    path = find_model_file(models_dir, object_id, IMAGE_SUFFIXES) if models_dir is not None else None
    if path is None:
        named = image_paths.get(object_id)
        if named is not None and Path(named).suffix.lower() in IMAGE_SUFFIXES and Path(named).is_file():
            path = Path(named)
    return image_size(path) if path is not None else None


def load_models(object_ids: Sequence[str], models_dir: Optional[Union[str, Path]] = None,
                image_paths: Optional[Mapping[str, Path]] = None) -> List[Tuple[str, ModelSource]]:
    """Model image or feature file per id: ``<id>.shft``/``<id>.png``/``<id>.jpg`` in
    ``models_dir`` first, then the path the reference planogram names.

    Feature files without a stored source size take w_j and h_j from the model image.
    """
    image_paths = image_paths or {}
    models_dir = Path(models_dir) if models_dir is not None else None
    loaded = []
    for object_id in dict.fromkeys(object_ids):
        path = find_model_file(models_dir, object_id) if models_dir is not None else None
        if path is None:
            path = image_paths.get(object_id)
        if path is None:
            raise FileNotFoundError(f"no model image or feature file for object {object_id!r}")
        if Path(path).suffix == FEATURE_SUFFIX:
            size = model_image_size(object_id, models_dir, image_paths)
            source: ModelSource = import_features(path, source_size=size, require_source_size=True)
        else:
            source = load_image(path)
        loaded.append((object_id, source))
    return loaded


def features_in_roi(features: FeatureSet, keep: np.ndarray) -> FeatureSet:
    if len(features) == 0:
        return features
    height, width = keep.shape
    cols = np.clip(np.rint(features.xs).astype(np.int64), 0, width - 1)
    rows = np.clip(np.rint(features.ys).astype(np.int64), 0, height - 1)
    return features.subset(np.flatnonzero(keep[rows, cols]))


def _candidates_for_model(shelf_features: FeatureSet, model: ProductModel, alpha: float, sigma: float,
                          keep: np.ndarray, min_footprint: float = 0.0
                          ) -> Tuple[VoteMatrix, List[Tuple[CandidateCenter, BoundingBox]]]:
    width, height = shelf_features.source_width, shelf_features.source_height
    matches = match_features(shelf_features, model.features, matching_threshold(alpha))
    beta = scale_factor(height, model.height)
    votes = restrict_votes(build_vote_matrix(matches, shelf_features, model, sigma, beta), keep)
    centers = extract_centers(votes, alpha)

    candidates = []
    for center in centers:
        box = fit_box(center, model.width, model.height, beta, width, height)
        if footprint_fraction(box, model.width, model.height, beta) < min_footprint:
            logger.debug(f"{model.object_id}: border cuts off ({center.x:.0f}, {center.y:.0f})")
            continue
        candidates.append((center, box))
    logger.debug(f"{model.object_id}: {len(matches)} matches, {len(centers)} centers, {len(candidates)} candidates")
    return votes, candidates


def _with_free_space(shelf: GrayImage, real: List[DetectedObject], config: PipelineConfig) -> List[DetectedObject]:
    return real + find_empty_and_unknown(shelf, real, config.empty_space, config.overlap_tolerance)


def _drop_for_stacking(real: List[DetectedObject], error: StackingConstraintError,
                       protected: Sequence[DetectedObject]) -> List[DetectedObject]:
    first, second = error.first, error.second
    loser = second if second.vote <= first.vote else first
    if any(loser is kept for kept in protected):
        loser = first if loser is second else second
    logger.warning(f"Stacking conflict: dropping {loser.object_id} at {loser.box.to_list()}")
    return [d for d in real if d is not loser]


def form_detected_planogram(shelf: GrayImage, real: List[DetectedObject], config: PipelineConfig,
                            protected: Sequence[DetectedObject] = (), shelf_id: str = ""
                            ) -> Tuple[List[DetectedObject], Planogram]:
    """Add empty/unknown regions and form the planogram, dropping detections that break stacking."""
    while True:
        detections = _with_free_space(shelf, real, config)
        try:
            return detections, form_planogram(detections, config.unknown_units_by_width, shelf_id)
        except StackingConstraintError as e:
            real = _drop_for_stacking(real, e, protected)


def detection_pass(shelf: GrayImage, shelf_features: FeatureSet, models: Sequence[ProductModel],
                   config: PipelineConfig, alpha: float = 1.0, roi: Optional[RoiMask] = None,
                   kept: Sequence[DetectedObject] = ()) -> DetectionPass:
    keep = roi_pixel_mask(shelf.width, shelf.height, roi or RoiMask())
    searchable = features_in_roi(shelf_features, keep)
    min_footprint = 1.0 - config.overlap_tolerance

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(
            lambda model: _candidates_for_model(searchable, model, alpha, config.sigma, keep, min_footprint), models
        ))

    candidates = [candidate for _, per_model in results for candidate in per_model]
    survivors = suppress(candidates, config.nms_threshold, kept=kept)
    logger.info(
        f"Detection pass at alpha={alpha:.6g}: {len(searchable)} searchable keypoints, "
        f"{len(candidates)} candidates, {len(survivors) - len(kept)} new detections"
    )
    return DetectionPass(
        detections=tuple(survivors),
        new_detections=len(survivors) - len(kept),
        votes=tuple(votes for votes, _ in results),
    )


def roi_from_outcome(outcome: AlignmentOutcome, tolerance: float) -> RoiMask:
    """Exclude the (expanded) boxes of correctly matched groups from further search."""
    regions = tuple(
        pair.det.box.expanded(tolerance)
        for pair in outcome.pairs
        if pair.label == ComplianceLabel.MT and pair.det is not None and pair.det.box is not None
    )
    return RoiMask(regions=regions, polarity=RoiPolarity.EXCLUDE)


def _check_models(models: Sequence[ProductModel], ref: Planogram) -> None:
    known = {model.object_id for model in models}
    missing = sorted({entry.group_type for entry in ref.entries} - known)
    if missing:
        raise ValueError(f"no model for reference objects: {', '.join(missing)}")


def run_compliance(shelf: GrayImage, models: Sequence[Tuple[str, ModelSource]], ref: Planogram,
                   config: Optional[PipelineConfig] = None, shelf_features: Optional[FeatureSet] = None,
                   on_votes: Optional[VoteSink] = None) -> ComplianceReport:
    config = config or PipelineConfig()
    product_models = prepare_models(models, config.extractor)
    _check_models(product_models, ref)
    if shelf_features is None:
        shelf_features = extract_features(shelf, config.extractor)
    logger.info(f"Shelf {ref.shelf_id or '<unnamed>'}: {len(shelf_features)} keypoints, {len(product_models)} models")

    state = IterationState()
    detections: List[DetectedObject] = []
    planogram: Optional[Planogram] = None
    outcome: Optional[AlignmentOutcome] = None
    records: List[IterationRecord] = []
    unchanged = 0

    while state.iteration < config.max_iterations:
        state.iteration += 1
        found = detection_pass(shelf, shelf_features, product_models, config, state.alpha, state.roi,
                               kept=state.kept_detections)
        if on_votes is not None:
            for votes in found.votes:
                on_votes(state.iteration, votes)

        trial_detections, trial_planogram = form_detected_planogram(
            shelf, list(found.detections), config, protected=state.kept_detections, shelf_id=ref.shelf_id
        )
        trial_outcome = align(trial_planogram, ref)

        previous_mu = state.mu_history[-1] if state.mu_history else None
        # after the first pass only a strictly higher mu is kept
        accepted = previous_mu is None or trial_outcome.mu > previous_mu
        if accepted:
            detections, planogram, outcome = trial_detections, trial_planogram, trial_outcome
            state.kept_detections = [d for d in trial_detections if d.is_real]
        else:
            logger.info(
                f"Iteration {state.iteration} did not raise mu (got {float(trial_outcome.mu):.4f}); "
                "detections rolled back"
            )

        mu = outcome.mu
        unchanged = unchanged + 1 if previous_mu is not None and mu == previous_mu else 0
        state.mu_history.append(mu)
        records.append(IterationRecord(
            iteration=state.iteration,
            alpha=state.alpha,
            tau_match=matching_threshold(state.alpha),
            tau_vote_scale=state.alpha / 2.0,
            new_detections=found.new_detections if accepted else 0,
            mu=mu,
            accepted=accepted,
            roi_regions=len(state.roi.regions),
        ))
        logger.info(f"Iteration {state.iteration}: alpha={state.alpha:.6g} mu={float(mu):.4f}")

        if mu == 1 or unchanged >= config.stall_window:
            break
        state.roi = roi_from_outcome(outcome, config.overlap_tolerance)
        state.alpha *= config.alpha_decay

    return ComplianceReport(
        shelf_id=ref.shelf_id,
        final_mu=state.mu_history[-1],
        iterations_run=state.iteration,
        outcome=outcome,
        detections=tuple(detections),
        planogram=planogram,
        per_iteration=tuple(records),
    )


def detect_products(shelf: GrayImage, models: Sequence[Tuple[str, ModelSource]],
                    config: Optional[PipelineConfig] = None, shelf_features: Optional[FeatureSet] = None
                    ) -> Tuple[List[DetectedObject], Tuple[VoteMatrix, ...]]:
    """Single pass at alpha = 1 over the whole shelf, with empty and unknown regions labelled."""
    config = config or PipelineConfig()
    product_models = prepare_models(models, config.extractor)
    if shelf_features is None:
        shelf_features = extract_features(shelf, config.extractor)
    found = detection_pass(shelf, shelf_features, product_models, config)
    detections = _with_free_space(shelf, list(found.detections), config)
    detections.sort(key=lambda d: (d.center[0], -d.vote, d.object_id))
    return detections, found.votes


def report_to_dict(report: ComplianceReport, config: Optional[PipelineConfig] = None) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "shelf_id": report.shelf_id,
        "final_mu": float(report.final_mu),
        "final_mu_exact": f"{report.final_mu.numerator}/{report.final_mu.denominator}",
        "iterations_run": report.iterations_run,
        "alignment": outcome_to_dict(report.outcome),
        "planogram": planogram_to_dict(report.planogram),
        "detections": [d.to_dict() for d in report.detections],
        "per_iteration": [
            {
                "iteration": record.iteration,
                "alpha": record.alpha,
                "tau_match": record.tau_match,
                "tau_vote_scale": record.tau_vote_scale,
                "new_detections": record.new_detections,
                "mu": float(record.mu),
                "accepted": record.accepted,
                "roi_regions": record.roi_regions,
            }
            for record in report.per_iteration
        ],
    }
    if config is not None:
        payload["config"] = config.model_dump(mode="json")
    return payload
