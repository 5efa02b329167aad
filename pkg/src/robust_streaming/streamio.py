"""Plain-text stream files: one ``item,weight`` update per line.

Blank lines and lines starting with ``#`` are ignored; a trailing ``#``
comment after an update is allowed too.
"""

from __future__ import annotations

from collections.abc import Iterable
from pathlib import Path

from .errors import StreamFormatError
from .sketches import StreamUpdate


def parse_stream(lines: Iterable[str]) -> list[StreamUpdate]:
    out = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise StreamFormatError(line_no, f"expected 'item,weight', got {raw.strip()!r}")
        try:
            item, weight = int(parts[0]), int(parts[1])
        except ValueError:
            raise StreamFormatError(line_no, f"not two integers: {raw.strip()!r}") from None
        if item < 1:
            raise StreamFormatError(line_no, f"item must be >= 1, got {item}")
        out.append(StreamUpdate(item, weight))
    return out


def read_stream(path: str | Path) -> list[StreamUpdate]:
    with open(path, encoding="utf-8") as fh:
        return parse_stream(fh)


def write_stream(path: str | Path, updates: Iterable[StreamUpdate],
                 header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for item, weight in updates:
            fh.write(f"{item},{weight}\n")
