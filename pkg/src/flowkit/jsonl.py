"""JSON-lines reading and writing."""

from __future__ import annotations

import gzip
import json
from pathlib import Path
from typing import Iterable, Iterator


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[dict]:
    """Yield one object per non-blank line; ``.gz`` files are decompressed.

    A file holding a single JSON array is also accepted.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        first = ""
        for line in fh:
            if line.strip():
                first = line
                break
        if first.lstrip().startswith("["):
            yield from json.loads(first + fh.read())
            return
        if first:
            yield json.loads(first)
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")
            count += 1
    return count
