"""Atomic artifact writes (temp file in the target directory, then rename)."""

import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]


def _atomic_write(path: PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_bytes(path: PathLike, data: bytes) -> Path:
    return _atomic_write(path, data)


def write_text(path: PathLike, text: str) -> Path:
    return _atomic_write(path, text.encode("utf-8"))


def write_json(path: PathLike, payload: Any) -> Path:
    return write_text(path, json.dumps(payload, indent=2) + "\n")


def write_png(path: PathLike, pixels: np.ndarray) -> Path:
    """Write a uint8 grid (H, W) or (H, W, 3) as PNG."""
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buffer, format="PNG")
    return _atomic_write(path, buffer.getvalue())
