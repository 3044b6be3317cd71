"""File plumbing shared by every module: atomic writes, digests, float text."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path


def fmt_float(x) -> str:
    """Shortest round-trip decimal; empty string for NaN/None."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    if x == 0.0:
        return "0.0"
    return repr(x)


def fmt_value(x) -> str:
    if isinstance(x, bool) or getattr(getattr(x, "dtype", None), "kind", "") == "b":
        return "true" if x else "false"
    if isinstance(x, (int,)) or (hasattr(x, "dtype") and getattr(x.dtype, "kind", "") in "iu"):
        return str(int(x))
    if isinstance(x, str):
        return x
    return fmt_float(x)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path, header, rows, delimiter=",") -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_value(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n"


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sidecar_path(path) -> Path:
    """``foo.csv`` -> ``foo.json``."""
    return Path(path).with_suffix(".json")


def read_csv_rows(path, expected_header=None, delimiter=","):
    """Yield ``(line_number, row)`` after checking the header.

    Raises ParseError for a wrong header.
    """
    from kcomplex.errors import ParseError

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, [(1, "empty file, header missing")]) from None
        if expected_header is not None and [h.strip() for h in header] != list(expected_header):
            raise ParseError(path, [(1, f"expected header {','.join(expected_header)!r}, got {','.join(header)!r}")])
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield reader.line_num, row
