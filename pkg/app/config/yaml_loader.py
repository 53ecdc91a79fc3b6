"""YAML document loading into pydantic models with file/line error context."""

import logging
from pathlib import Path
from typing import Any, TypeVar

import yaml
from pydantic import BaseModel, ValidationError

from app.utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def read_yaml(path: str | Path) -> Any:
    """Parse a YAML file.

    Raises:
        FileNotFoundError: the file does not exist.
        ConfigError: YAML syntax error (with the offending line).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"Config file not found at {path}") from None
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigError(f"YAML syntax error: {e.problem}", path=str(path), line=line) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML error: {e}", path=str(path)) from e


def format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def validate_document(document: Any, model: type[ModelT], path: str | Path | None = None) -> ModelT:
    """Validate a parsed document; relative paths in it resolve against the file's directory."""
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError(f"expected a mapping at the top level, got {type(document).__name__}", path=str(path) if path else None)
    context = {"base_dir": Path(path).parent} if path is not None else None
    try:
        return model.model_validate(document, context=context)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e), path=str(path) if path else None) from e


def load_yaml_model(path: str | Path, model: type[ModelT]) -> ModelT:
    """Read ``path`` and validate it as ``model``."""
    loaded = validate_document(read_yaml(path), model, path)
    logger.info("Loaded %s from %s", model.__name__, path)
    return loaded
