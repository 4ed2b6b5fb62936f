"""Input/target text transforms, each an independent ablation toggle."""

from __future__ import annotations

import re

_DIGIT_COMMAS = re.compile(r"(?<=[0-9]),+")


def lowercase_transform(text: str) -> str:
    """Lowercase source and target text so surface forms match stored values."""
    return text.lower()


def strip_numeric_commas(text: str) -> str:
    """Delete commas directly following a digit ("1,234" -> "1234").

    Removes whole comma runs after a digit, so the transform is
    idempotent. Intentionally lossy for prose like "in 2019, we paid".
    """
    return _DIGIT_COMMAS.sub("", text)


def prepend_slots(keys: list[str], text: str) -> str:
    """Prefix the expected field names; generation is not constrained to them."""
    if not keys:
        raise ValueError("slot prefix needs at least one key")
    return "slots: " + " | ".join(keys) + "\n" + text
