"""CSV ingestion/emission and run manifests.

All CSVs carry a header row, use '.' as decimal separator and SI units in the
column names. Files are written to a temporary name and renamed into place so
a failed run never leaves a half-written output behind.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .core import DataError


def fmt(value) -> str:
    if isinstance(value, (bool, str)):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def read_csv(path, required: Sequence[str], optional: Sequence[str] = ()) -> list[dict]:
    """Read a headed CSV of floats.

    Returns one dict per data row keyed by column name; optional columns are
    absent from a row's dict when the column is missing from the file.

    Raises:
        DataError: naming the offending line for missing columns, wrong field
            counts or unparsable numbers, and "no data rows" for empty input.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [(n, line) for n, line in enumerate(fh, start=1) if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: no data rows")
    header_no, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}:{header_no}: header lacks column(s) {', '.join(missing)}")
    unknown = [c for c in header if c not in required and c not in optional]
    if unknown:
        raise DataError(f"{path}:{header_no}: unexpected column(s) {', '.join(unknown)}")
    rows = []
    for line_no, line in lines[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(header):
            raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(fields)}")
        try:
            rows.append({name: float(v) for name, v in zip(header, fields)})
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write(path, csv_text(header, rows))


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(out_dir, command: str, config: dict, outputs: Sequence[Path], version: str) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "toolkit_version": version,
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
    }
    return atomic_write(out_dir / f"manifest_{command}.json", json.dumps(manifest, indent=2) + "\n")
