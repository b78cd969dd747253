import json
import logging

import numpy as np
from PIL import Image

from shelfalign import outputs
from shelfalign.logging_setup import LOG_LEVEL_ENV_VAR, configure_logging


def test_json_written_with_trailing_newline(tmp_path):
    path = outputs.write_json(tmp_path / "nested" / "out.json", {"mu": 0.5})
    assert path.read_text().endswith("}\n")
    assert json.loads(path.read_text()) == {"mu": 0.5}
    assert [p.name for p in path.parent.iterdir()] == ["out.json"]


def test_png_round_trip(tmp_path):
    pixels = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = outputs.write_png(tmp_path / "grid.png", pixels)
    with Image.open(path) as img:
        assert np.array_equal(np.asarray(img), pixels)


def test_overwrite_replaces_content(tmp_path):
    outputs.write_text(tmp_path / "a.txt", "first")
    outputs.write_text(tmp_path / "a.txt", "second")
    assert (tmp_path / "a.txt").read_text() == "second"


def test_json_logging_records(capsys):
    configure_logging("DEBUG", json_output=True)
    logging.getLogger("shelfalign.test").info("pass done")
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["message"] == "pass done"
    assert record["levelname"] == "INFO"
    assert record["name"] == "shelfalign.test"


def test_level_from_environment(monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV_VAR, "warning")
    configure_logging()
    assert logging.getLogger().level == logging.WARNING
    assert len(logging.getLogger().handlers) == 1
