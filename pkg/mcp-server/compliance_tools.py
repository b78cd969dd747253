import asyncio
import logging
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from shelfalign.alignment import align, outcome_to_dict, render_alignment_table
from shelfalign.config import PipelineConfig
from shelfalign.imaging import load_image
from shelfalign.planogram import load_reference_with_images, planogram_from_dict
from shelfalign.search import detect_products, load_models, report_to_dict, run_compliance

logger = logging.getLogger(__name__)

ReportCallback = Callable[[Dict[str, Any]], Awaitable[None]]


class PlanogramItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    quantity: int


class AlignArguments(BaseModel):
    model_config = ConfigDict(extra="forbid")

    detected: List[PlanogramItem] = Field(min_length=1)
    reference: List[PlanogramItem] = Field(min_length=1)


class DetectArguments(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shelf_image: str
    object_ids: Optional[List[str]] = None
    planogram: Optional[str] = None
    models_dir: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)


class ComplianceArguments(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shelf_image: str
    planogram: str
    models_dir: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)


def _as_planogram(items: List[PlanogramItem], detected: bool):
    return planogram_from_dict({"products": [item.model_dump() for item in items]}, detected=detected)


class ComplianceTools:
    def __init__(self, config: Optional[PipelineConfig] = None, on_report: Optional[ReportCallback] = None):
        self.config = config or PipelineConfig()
        self.on_report = on_report

    async def align_planograms(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Align a detected planogram against a reference one"""
        arguments = AlignArguments.model_validate(params)
        outcome = align(_as_planogram(arguments.detected, True), _as_planogram(arguments.reference, False))
        result = outcome_to_dict(outcome)
        result["table"] = render_alignment_table(outcome)
        return result

    async def detect_products(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Single detection pass over a shelf image"""
        arguments = DetectArguments.model_validate(params)
        config = self.config.with_overrides(**arguments.overrides)

        def run() -> Dict[str, Any]:
            image_paths = {}
            object_ids = arguments.object_ids or []
            if arguments.planogram:
                reference, image_paths = load_reference_with_images(arguments.planogram)
                object_ids = object_ids or [entry.group_type for entry in reference.entries]
            if not object_ids:
                raise ValueError("detect_products needs object_ids or a planogram")
            models = load_models(object_ids, arguments.models_dir, image_paths)
            detections, _ = detect_products(load_image(arguments.shelf_image), models, config)
            return {"shelf": Path(arguments.shelf_image).name, "detections": [d.to_dict() for d in detections]}

        return await asyncio.to_thread(run)

    async def check_compliance(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """Full iterative compliance check; connected clients get a compliance_report notification"""
        arguments = ComplianceArguments.model_validate(params)
        config = self.config.with_overrides(**arguments.overrides)

        def run() -> Dict[str, Any]:
            reference, image_paths = load_reference_with_images(arguments.planogram)
            models = load_models([entry.group_type for entry in reference.entries], arguments.models_dir, image_paths)
            report = run_compliance(load_image(arguments.shelf_image), models, reference, config)
            return report_to_dict(report, config)

        result = await asyncio.to_thread(run)
        logger.info(f"Compliance for {result['shelf_id'] or arguments.shelf_image}: mu={result['final_mu']:.4f}")
        if self.on_report is not None:
            await self.on_report(result)
        return result
