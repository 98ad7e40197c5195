"""Frequency ranking and categorical index mappings."""

from __future__ import annotations

from collections import Counter
from typing import Hashable, Iterable


def top_common(values: Iterable[Hashable], k: int = 5) -> list[tuple[Hashable, int]]:
    """The ``k`` most frequent values, by descending count then value."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = Counter(values)
    try:
        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    except TypeError:
        ranked = sorted(counts.items(), key=lambda item: (-item[1], str(item[0])))
    return ranked[:k]


def index_mapping(values: Iterable[Hashable]) -> dict[Hashable, int]:
    """Map each distinct value to an integer index in first-seen order."""
    mapping: dict[Hashable, int] = {}
    for v in values:
        if v not in mapping:
            mapping[v] = len(mapping)
    return mapping
