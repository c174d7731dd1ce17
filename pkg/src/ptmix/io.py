"""File formats: data/label CSVs, deterministic JSON, atomic writes."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile

import numpy as np

from .errors import ValidationError


def fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def to_json(obj, indent=2):
    """JSON text with fixed key order and 17-significant-digit floats.

    Non-finite floats are written as NaN/Infinity (Python's json reads them).
    """
    out = io.StringIO()
    _emit(obj, out, indent, 0)
    out.write("\n")
    return out.getvalue()


def _emit(obj, out, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.write("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.write("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(fmt_float(obj))
    elif isinstance(obj, str):
        out.write(_quote(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.write("{}")
            return
        out.write("{\n")
        for k, (key, val) in enumerate(obj.items()):
            out.write(pad + _quote(str(key)) + ": ")
            _emit(val, out, indent, level + 1)
            out.write(",\n" if k < len(obj) - 1 else "\n")
        out.write(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else list(obj)
        if not items:
            out.write("[]")
        elif all(not isinstance(v, (dict, list, tuple)) for v in items):
            out.write("[")
            for k, v in enumerate(items):
                if k:
                    out.write(", ")
                _emit(v, out, indent, level + 1)
            out.write("]")
        else:
            out.write("[\n")
            for k, v in enumerate(items):
                out.write(pad)
                _emit(v, out, indent, level + 1)
                out.write(",\n" if k < len(items) - 1 else "\n")
            out.write(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _quote(s):
    import json

    return json.dumps(s, ensure_ascii=False)


def atomic_write(path, text):
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def matrix_csv(values, column_names, row_names, id_header="sample_id"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([id_header, *column_names])
    for rid, row in zip(row_names, values):
        w.writerow([rid, *(fmt_float(v) for v in row)])
    return buf.getvalue()


def read_matrix_csv(path):
    """Header row, sample-id first column, numeric variables after.

    Returns (values, column_names, row_names). Parse errors name the line and
    column (both 1-based).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise ValidationError(f"{path}: line 1: need an id column and at least one variable")
    names = header[1:]
    values, row_names = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(f"{path}: line {ln}: expected {len(header)} fields, got {len(row)}")
        row_names.append(row[0])
        vals = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError:
                raise ValidationError(f"{path}: line {ln}, column {col}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ValidationError(f"{path}: line {ln}, column {col}: non-finite value {cell!r}")
            vals.append(v)
        values.append(vals)
    if not values:
        raise ValidationError(f"{path}: no data rows")
    return np.array(values, dtype=float), names, row_names


def labels_csv(row_names, labels, header="label"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", header])
    for rid, lab in zip(row_names, labels):
        w.writerow([rid, int(lab)])
    return buf.getvalue()


def read_labels_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValidationError(f"{path}: no label rows")
    out = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValidationError(f"{path}: line {ln}: expected 2 fields")
        try:
            out.append(int(row[1]))
        except ValueError:
            raise ValidationError(f"{path}: line {ln}, column 2: not an integer label") from None
    return np.array(out, dtype=int)


def rows_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
