"""CSV / JSON file loading and atomic artifact writes.

Loaders never raise for unreadable files; they return ``(value, error)`` and
the caller decides whether the error is fatal.
"""

import contextlib
import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any

import pandas as pd

logger = logging.getLogger(__name__)

_HASH_CHUNK = 1 << 16


def load_json(path: Path) -> tuple[Any | None, str | None]:
    """Parse a JSON document. Returns (data, error)."""
    path = Path(path)
    if not path.is_file():
        return None, f"{path.name}: no such file"
    try:
        return json.loads(path.read_text(encoding="utf-8")), None
    except json.JSONDecodeError as e:
        return None, f"{path.name}: malformed JSON ({e.msg} at line {e.lineno})"
    except (OSError, UnicodeDecodeError) as e:
        return None, f"{path.name}: unreadable ({e})"


def load_csv(path: Path) -> tuple[pd.DataFrame | None, str | None]:
    """Every column as str, blank cells as "" rather than NaN. Returns (frame, error)."""
    path = Path(path)
    if not path.is_file():
        return None, f"{path.name}: no such file"
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8-sig"), None
    except pd.errors.EmptyDataError:
        return None, f"{path.name}: empty file"
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        return None, f"{path.name}: malformed CSV ({e})"
    except OSError as e:
        return None, f"{path.name}: unreadable ({e})"


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def _replace_atomically(path: Path, text: str) -> tuple[bool, str | None]:
    """Write next to the target, then os.replace so readers never see a partial file."""
    path = Path(path)
    staged = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile("w", encoding="utf-8", newline="\n", dir=path.parent,
                                         prefix=f".{path.name}.", suffix=".part", delete=False) as handle:
            staged = Path(handle.name)
            handle.write(text)
        os.replace(staged, path)
        return True, None
    except OSError as e:
        if staged is not None:
            with contextlib.suppress(OSError):
                staged.unlink(missing_ok=True)
        return False, str(e)


def atomic_write_json(path: Path, obj) -> tuple[bool, str | None]:
    ok, err = _replace_atomically(path, dumps_json(obj))
    if not ok:
        logger.error("WRITE_FAILED path=%s error=%s", path, err)
    return ok, err


def atomic_write_csv(path: Path, frame: pd.DataFrame) -> tuple[bool, str | None]:
    ok, err = _replace_atomically(path, frame.to_csv(index=False, lineterminator="\n"))
    if not ok:
        logger.error("WRITE_FAILED path=%s error=%s", path, err)
    return ok, err


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as stream:
        while chunk := stream.read(_HASH_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def mtime_epoch(path: Path) -> int | None:
    """Whole-second modification time, or None when the file is gone."""
    try:
        return int(Path(path).stat().st_mtime)
    except OSError:
        return None
