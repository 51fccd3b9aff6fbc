"""JSONL / JSON file helpers with atomic writes.

Writers always go through a temp file + rename so a crashed stage never
leaves a truncated output behind. Serialization is canonical (sorted keys)
so identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Iterable, Iterator
from pathlib import Path

from .core import GuardkitError


class DataFileError(GuardkitError):
    """A data file could not be read or decoded."""


def dumps_canonical(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DataFileError(f"cannot open {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFileError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            write(handle)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    """Atomically write one canonical JSON object per line; returns the row count."""
    path = Path(path)
    count = 0

    def _write(handle):
        nonlocal count
        for row in rows:
            handle.write(dumps_canonical(row))
            handle.write("\n")
            count += 1

    _atomic_write(path, _write)
    return count


def write_json(path: str | Path, obj) -> None:
    """Atomically write a pretty-printed, key-sorted JSON document."""
    path = Path(path)

    def _write(handle):
        json.dump(obj, handle, ensure_ascii=False, sort_keys=True, indent=2)
        handle.write("\n")

    _atomic_write(path, _write)


def write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    _atomic_write(path, lambda handle: handle.write(text))


def read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise DataFileError(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFileError(f"{path}: invalid JSON: {exc}") from exc
