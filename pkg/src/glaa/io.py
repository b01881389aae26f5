"""File formats.

Input matrices are numeric CSV files, one observation per row, with an
optional single header row (detected when no cell of the first row parses
as a number; a partly numeric first row is a parse error).  Result documents are JSON; floats are written with 17 significant
digits so they re-parse to the same doubles.  A tensor is stored as a document
with ``dims`` and its ``values`` flattened in C order (last index fastest).
"""

import csv
import io
import json
import math
import os

import numpy as np


class ParseError(ValueError):
    """An input file could not be read as a numeric matrix."""


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_matrix(path):
    """Read a numeric CSV into an ``n x p`` float array."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if not any(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path}: header but no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i + 1}, column {j + 1}: not a number: {cell!r}") from None
    if not np.all(np.isfinite(out)):
        raise ParseError(f"{path}: non-finite values")
    return out


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"cannot serialize non-finite float {v}")
        return format(v, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric rows stay on one line
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(doc, indent=2):
    return _encode(doc, indent, 0) + "\n"


def _atomic_write(path, text):
    # write beside the target and rename, so a failed run leaves no partial file
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_document(path, doc):
    _atomic_write(path, dumps(doc))


def read_document(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def tensor_document(t):
    t = np.asarray(t, dtype=float)
    return {"dims": list(t.shape), "layout": "C", "values": t.ravel().tolist()}


def tensor_from_document(doc):
    dims = tuple(int(d) for d in doc["dims"])
    values = np.asarray(doc["values"], dtype=float)
    if values.size != math.prod(dims):
        raise ParseError(f"tensor has {values.size} values for dims {dims}")
    return values.reshape(dims)


def write_csv(path, header, rows):
    """Write rows of dicts; floats use 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(row.get(h, "")) for h in header])
    _atomic_write(path, buf.getvalue())


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v
