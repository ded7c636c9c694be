"""Shared text helpers: normalization, slugs, feature-kind tagging."""

from __future__ import annotations

import re

_WS_RE = re.compile(r"\s+")
_SLUG_RE = re.compile(r"[^a-z0-9]+")
_WORD_RE = re.compile(r"[a-z0-9]+")

# Terminal punctuation stripped from normalized features.
_TERMINAL_PUNCT = ".,;:!?"

# Cue words for the feature-kind heuristic. Location cues take precedence
# over activity cues; anything else is tagged as a plain symptom.
_LOCATION_CUES = frozenset({"located", "location", "region", "area", "site"})
_ACTIVITY_CUES = frozenset(
    {
        "walking",
        "sitting",
        "standing",
        "bending",
        "lifting",
        "climbing",
        "moving",
        "exercise",
        "exertion",
        "activity",
        "limitation",
        "limited",
        "unable",
    }
)


def normalize_feature(text: str) -> str:
    """Lowercase, collapse whitespace, strip terminal punctuation."""
    collapsed = _WS_RE.sub(" ", text).strip().lower()
    return collapsed.rstrip(_TERMINAL_PUNCT + " ")


def slugify(label: str) -> str:
    """Reduce a label to a lowercase underscore slug ("Neck pain!" -> "neck_pain")."""
    return _SLUG_RE.sub("_", label.lower()).strip("_")


def classify_feature_kind(feature: str) -> str:
    """Tag a manifestation as location / activity_limitation / symptom.

    Word-level cue matching; location wins over activity when both appear.
    """
    words = set(_WORD_RE.findall(feature.lower()))
    if words & _LOCATION_CUES:
        return "location"
    if words & _ACTIVITY_CUES:
        return "activity_limitation"
    return "symptom"
