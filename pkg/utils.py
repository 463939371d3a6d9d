import logging
import math
import os
import tempfile
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, List, Optional


LOG_FILE_NAME = "experiments.log"


def setup_logging(debug: bool = False, log_dir: Optional[Path] = None) -> logging.Logger:
    """Configure root logging for CLI entrypoints and experiment workers."""

    log_dir = log_dir or Path("logs")
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / LOG_FILE_NAME

    level = logging.DEBUG if debug else logging.INFO
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    root_logger = logging.getLogger()
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)
        handler.close()

    root_logger.setLevel(level)
    root_logger.propagate = False

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)

    file_handler = RotatingFileHandler(
        log_path,
        maxBytes=1_000_000,
        backupCount=3,
        encoding="utf-8",
    )
    file_handler.setLevel(level)
    file_handler.setFormatter(formatter)

    root_logger.addHandler(console_handler)
    root_logger.addHandler(file_handler)
    return root_logger


def set_logging_level(level: int) -> logging.Logger:
    """Update the root logger and all attached handlers to the same level."""

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in root_logger.handlers:
        handler.setLevel(level)
    return root_logger


def ensure_output_dir(path: Path) -> Path:
    """Create ``path`` if needed and prove it is writable; raises OSError otherwise."""

    path.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path, prefix=".write-reading-", delete=True):
        pass
    if not os.access(path, os.W_OK):
        raise PermissionError(f"Output directory is not writable: {path}")
    return path


def json_safe(value: Any) -> Any:
    """Replace NaN and infinities with None so metrics serialize as strict JSON."""

    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return None
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


def parse_float_list(text: str) -> List[float]:
    """Parse '50,100,150' into floats; empty items are rejected."""

    items = [item.strip() for item in text.split(",")]
    if not items or any(not item for item in items):
        raise ValueError(f"Expected a comma-separated list of numbers, got '{text}'")
    return [float(item) for item in items]

