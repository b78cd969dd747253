"""Retail shelf product detection and planogram compliance scoring."""

from shelfalign.alignment import align, match_ratio
from shelfalign.config import PipelineConfig, load_config
from shelfalign.search import detect_products, run_compliance

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "align", "detect_products", "load_config", "match_ratio", "run_compliance"]
