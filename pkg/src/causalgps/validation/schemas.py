from __future__ import annotations

import json
from functools import cache
from pathlib import Path
from typing import Any, Literal

from jsonschema import Draft202012Validator, ValidationError

DocumentKind = Literal["truth", "attempt_record", "tuner_summary"]

SCHEMA_FILES: dict[DocumentKind, str] = {
    "truth": "truth.v1.json",
    "attempt_record": "attempt_record.v1.json",
    "tuner_summary": "tuner_summary.v1.json",
}


def _schemas_dir() -> Path:
    # src/causalgps/validation -> repository root
    return Path(__file__).resolve().parents[3] / "schemas"


@cache
def validator_for(kind: DocumentKind) -> Draft202012Validator:
    schema = json.loads((_schemas_dir() / SCHEMA_FILES[kind]).read_text(encoding="utf-8"))
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def validate_document(kind: DocumentKind, payload: dict[str, Any]) -> None:
    """Raises ValidationError on invalid payload."""
    validator_for(kind).validate(payload)


def validate_truth(payload: dict[str, Any]) -> None:
    validate_document("truth", payload)


def validate_attempt_record(payload: dict[str, Any]) -> None:
    validate_document("attempt_record", payload)


def validate_tuner_summary(payload: dict[str, Any]) -> None:
    validate_document("tuner_summary", payload)


__all__ = [
    "SCHEMA_FILES",
    "validate_document",
    "validate_truth",
    "validate_attempt_record",
    "validate_tuner_summary",
    "ValidationError",
]
