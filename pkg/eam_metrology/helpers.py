"""Several generic helpers: JSON encoding, CSV tables and atomic file writes."""

from __future__ import annotations

import csv
import hashlib
import io
import os
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import orjson

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence


def get_serializable_value(obj: Any, raise_unhandled: bool = False) -> Any:
    """Parse the value to its serializable equivalent."""
    if isinstance(obj, list | set | tuple):
        return [get_serializable_value(x) for x in obj]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    if raise_unhandled:
        raise TypeError
    return obj


def json_dumps(data: Any, indent: bool = False, sort_keys: bool = False) -> str:
    """Dump json string."""
    option = orjson.OPT_SERIALIZE_NUMPY
    if indent:
        option |= orjson.OPT_INDENT_2
    if sort_keys:
        option |= orjson.OPT_SORT_KEYS
    return orjson.dumps(
        data,
        default=get_serializable_value,
        option=option,
    ).decode("utf-8")


json_loads = orjson.loads


def stable_hash(data: Any) -> str:
    """Return the SHA-256 hex digest of the canonical (sorted) JSON dump of data."""
    return hashlib.sha256(json_dumps(data, sort_keys=True).encode("utf-8")).hexdigest()


def write_atomic(path: str | Path, text: str) -> Path:
    """Write text to path via a temporary file in the same directory and a rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return target


def _format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float | np.floating):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def format_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Return a CSV table with a mandatory header row; floats are written losslessly."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            msg = f"row has {len(row)} cells, header has {len(header)}"
            raise ValueError(msg)
        writer.writerow([_format_cell(value) for value in row])
    return buffer.getvalue()


def parse_csv(text: str) -> tuple[list[str], list[list[str]]]:
    """Parse a CSV table written by format_csv into (header, rows of raw cells)."""
    reader = csv.reader(io.StringIO(text))
    lines = [row for row in reader if row]
    if not lines:
        msg = "CSV table has no header row"
        raise ValueError(msg)
    return lines[0], lines[1:]


def format_metadata(values: dict[str, Any]) -> str:
    """Return a sidecar metadata block of `key = value` lines."""
    return "".join(f"{key} = {_format_cell(value)}\n" for key, value in values.items())


def parse_metadata(text: str) -> dict[str, str]:
    """Parse a `key = value` metadata block; blank lines and `#` comments are skipped."""
    values: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            msg = f"malformed metadata line: {raw!r}"
            raise ValueError(msg)
        values[key.strip()] = value.strip()
    return values
