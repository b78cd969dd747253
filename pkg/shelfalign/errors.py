from typing import Any

from pydantic import ValidationError


class ShelfAlignError(Exception):
    """Base class for input and validation failures raised by shelfalign."""


class ImageFormatError(ShelfAlignError, ValueError):
    pass


class FeatureFileError(ShelfAlignError, ValueError):
    def __init__(self, message: str, record: int = -1):
        if record >= 0:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class PlanogramValidationError(ShelfAlignError, ValueError):
    pass


class StackingConstraintError(ShelfAlignError):
    """Two stacked detections have different product types."""

    def __init__(self, first: Any, second: Any):
        super().__init__(
            f"stacked objects must share a type: {first.object_id} at {first.box.to_list()} "
            f"vs {second.object_id} at {second.box.to_list()}"
        )
        self.first = first
        self.second = second


class LayoutError(ShelfAlignError, ValueError):
    pass


class ConfigError(ShelfAlignError, ValueError):
    pass


def describe_validation_error(error: ValidationError) -> str:
    """One line per failing field: ``loc.path: message``, joined by semicolons."""
    return "; ".join(
        f"{'.'.join(str(part) for part in item['loc']) or '<root>'}: {item['msg']}" for item in error.errors()
    )
