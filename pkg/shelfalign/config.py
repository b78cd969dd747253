import json
import logging
import os
from pathlib import Path
from typing import Any, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from shelfalign.errors import ConfigError, describe_validation_error

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "SHELFALIGN_CONFIG"


class ExtractorSettings(BaseModel):
    """Native corner + binary descriptor extractor."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    fast_threshold: int = Field(20, ge=1, le=255)
    levels: int = Field(4, ge=1, le=8)
    scale_factor: float = Field(1.2, gt=1.0, le=2.0)
    max_keypoints: int = Field(2000, ge=1)
    patch_size: int = Field(31, ge=15, le=63)
    smoothing_sigma: float = Field(2.0, ge=0.0)
    pattern_seed: int = 31415

    @field_validator("patch_size")
    @classmethod
    def _odd_patch(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("patch_size must be odd")
        return value


class EmptySpaceSettings(BaseModel):
    """Dark-box template used to find empty shelf space."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dark_threshold: float = Field(60.0, ge=0.0, le=255.0)
    window_fraction: float = Field(0.25, gt=0.0, le=1.0)
    stride_fraction: float = Field(0.125, gt=0.0, le=1.0)


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    extractor: ExtractorSettings = Field(default_factory=ExtractorSettings)
    empty_space: EmptySpaceSettings = Field(default_factory=EmptySpaceSettings)
    sigma: float = Field(7.0, gt=0.0)
    nms_threshold: float = Field(0.2, gt=0.0, lt=1.0)
    overlap_tolerance: float = Field(0.2, ge=0.0, lt=1.0)
    alpha_decay: float = Field(0.75, gt=0.0, lt=1.0)
    max_iterations: int = Field(10, ge=1, le=100)
    stall_window: int = Field(6, ge=1)
    unknown_units_by_width: bool = False
    eval_iou_threshold: float = Field(0.25, gt=0.0, lt=1.0)
    workers: int = Field(4, ge=1, le=64)
    seed: int = 0

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Return a validated copy; ``None`` values are ignored."""
        values = self.model_dump()
        values.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return PipelineConfig.model_validate(values)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {describe_validation_error(e)}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Load the pipeline configuration.

    Resolution order: explicit ``path``, then the ``SHELFALIGN_CONFIG`` environment variable
    (a ``.env`` file is honoured), then built-in defaults.
    """
    load_dotenv()
    if path is None:
        path = os.getenv(CONFIG_ENV_VAR) or None
    if path is None:
        logger.debug("No config file given, using defaults")
        return PipelineConfig()

    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e

    try:
        config = PipelineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {describe_validation_error(e)}") from e
    logger.info(f"Loaded config from {path}")
    return config
