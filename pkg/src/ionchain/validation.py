"""Validation of command output documents against the shipped JSON schemas."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=None)
def load_schema(command: str) -> dict:
    text = resources.files("ionchain").joinpath("schemas", f"{command}.schema.json").read_text()
    return json.loads(text)


def validate_output(doc: dict, command: str) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match."""
    jsonschema.validate(doc, load_schema(command), cls=jsonschema.Draft202012Validator)
