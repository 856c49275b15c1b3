"""File formats: Matrix Market matrices, TT JSON documents, operator
manifests and solver-trace CSV files."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .tt import TtTensor

__all__ = [
    "MatrixMarketError",
    "TRACE_HEADER",
    "load_matrix_market",
    "load_operator_manifest",
    "read_trace_csv",
    "read_tt_json",
    "write_trace_csv",
    "write_tt_json",
]

TRACE_HEADER = ("iter", "resid_est", "ne_resid_est", "ne_resid_true", "max_rank", "seconds")


class MatrixMarketError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def load_matrix_market(path):
    """Read a real Matrix Market file.

    Coordinate files come back as ``scipy.sparse.csc_matrix``; array files as
    dense ndarrays.  ``symmetric`` and ``skew-symmetric`` storage is expanded.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError(path, 1, "empty file")
    banner = lines[0].split()
    if len(banner) != 5 or banner[0].lower() != "%%matrixmarket" or banner[1].lower() != "matrix":
        raise MatrixMarketError(path, 1, "missing '%%MatrixMarket matrix' banner")
    fmt, field, symmetry = (b.lower() for b in banner[2:])
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(path, 1, f"unknown format {fmt!r}")
    if field not in ("real", "integer", "pattern", "double"):
        raise MatrixMarketError(path, 1, f"unsupported field {field!r}")
    if symmetry not in ("general", "symmetric", "skew-symmetric"):
        raise MatrixMarketError(path, 1, f"unsupported symmetry {symmetry!r}")
    if field == "pattern" and fmt == "array":
        raise MatrixMarketError(path, 1, "pattern field requires coordinate format")

    lineno = 1
    body = iter(enumerate(lines[1:], start=2))
    size = None
    for lineno, line in body:
        s = line.strip()
        if s and not s.startswith("%"):
            size = s.split()
            break
    if size is None:
        raise MatrixMarketError(path, lineno + 1, "missing size line")
    try:
        dims = [int(v) for v in size]
    except ValueError:
        raise MatrixMarketError(path, lineno, f"bad size line {' '.join(size)!r}") from None
    expected = 3 if fmt == "coordinate" else 2
    if len(dims) != expected or min(dims) < 0:
        raise MatrixMarketError(path, lineno, f"size line needs {expected} nonnegative integers")

    entries = []
    last = lineno
    for lineno, line in body:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        entries.append((lineno, s.split()))
        last = lineno

    rows, cols = dims[0], dims[1]
    if fmt == "array":
        count = rows * cols if symmetry == "general" else rows * (rows + 1) // 2
        if symmetry == "skew-symmetric":
            count = rows * (rows - 1) // 2
        if symmetry != "general" and rows != cols:
            raise MatrixMarketError(path, lineno, "symmetric storage needs a square matrix")
        if len(entries) < count:
            raise MatrixMarketError(path, last + 1, f"expected {count} values, found {len(entries)}")
        if len(entries) > count:
            raise MatrixMarketError(path, entries[count][0], "more values than the header declares")
        vals = np.empty(len(entries))
        for k, (ln, tok) in enumerate(entries):
            if len(tok) != 1:
                raise MatrixMarketError(path, ln, "expected one value per line")
            try:
                vals[k] = float(tok[0])
            except ValueError:
                raise MatrixMarketError(path, ln, f"bad value {tok[0]!r}") from None
        if symmetry == "general":
            return vals.reshape((rows, cols), order="F")
        out = np.zeros((rows, cols))
        k = 0
        for j in range(cols):
            start = j if symmetry == "symmetric" else j + 1
            for i in range(start, rows):
                out[i, j] = vals[k]
                out[j, i] = vals[k] if symmetry == "symmetric" else -vals[k]
                k += 1
        return out

    nnz = dims[2]
    if len(entries) < nnz:
        raise MatrixMarketError(path, last + 1, f"expected {nnz} entries, found {len(entries)}")
    if len(entries) > nnz:
        raise MatrixMarketError(path, entries[nnz][0], "more entries than the header declares")
    ii = np.empty(nnz, dtype=np.int64)
    jj = np.empty(nnz, dtype=np.int64)
    vv = np.ones(nnz)
    want = 2 if field == "pattern" else 3
    for k, (ln, tok) in enumerate(entries):
        if len(tok) != want:
            raise MatrixMarketError(path, ln, f"expected {want} fields, found {len(tok)}")
        try:
            ii[k] = int(tok[0]) - 1
            jj[k] = int(tok[1]) - 1
            if want == 3:
                vv[k] = float(tok[2])
        except ValueError:
            raise MatrixMarketError(path, ln, f"cannot parse entry {' '.join(tok)!r}") from None
        if not (0 <= ii[k] < rows and 0 <= jj[k] < cols):
            raise MatrixMarketError(path, ln, f"index ({tok[0]}, {tok[1]}) outside {rows}x{cols}")
    if symmetry != "general":
        off = ii != jj
        sign = 1.0 if symmetry == "symmetric" else -1.0
        ii, jj, vv = (
            np.concatenate([ii, jj[off]]),
            np.concatenate([jj, ii[off]]),
            np.concatenate([vv, sign * vv[off]]),
        )
    return sp.csc_matrix((vv, (ii, jj)), shape=(rows, cols))


def load_operator_manifest(path):
    """Build a KronSumOperator from ``{"modes": [{"rows", "cols", "terms": [paths]}]}``.

    Relative matrix paths resolve against the manifest's directory.
    """
    from .kron import KronSumOperator

    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    modes = doc["modes"]
    if not modes:
        raise ValueError("manifest lists no modes")
    n_terms = len(modes[0]["terms"])
    grid = [[None] * len(modes) for _ in range(n_terms)]
    for j, mode in enumerate(modes):
        if len(mode["terms"]) != n_terms:
            raise ValueError(f"mode {j} lists {len(mode['terms'])} terms, expected {n_terms}")
        for i, rel in enumerate(mode["terms"]):
            a = load_matrix_market(path.parent / rel)
            if a.shape != (mode["rows"], mode["cols"]):
                raise ValueError(
                    f"{rel}: shape {a.shape} does not match manifest ({mode['rows']}, {mode['cols']})"
                )
            grid[i][j] = a
    return KronSumOperator(grid)


def write_tt_json(x: TtTensor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(x.to_json_dict(), fh)


def read_tt_json(path) -> TtTensor:
    with open(path, "r", encoding="utf-8") as fh:
        return TtTensor.from_json_dict(json.load(fh))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(trace, path) -> None:
    """One row per iteration; missing true residuals are written as empty cells.

    Floats use ``repr`` so values round-trip exactly regardless of locale.
    """
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in trace:
            w.writerow([_fmt(getattr(rec, name)) for name in TRACE_HEADER])
    os.replace(tmp, path)


def read_trace_csv(path) -> list:
    """Rows of a trace CSV as dicts with numeric values (``None`` for empty cells)."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        for row in reader:
            out.append(
                {
                    "iter": int(row["iter"]),
                    "resid_est": float(row["resid_est"]),
                    "ne_resid_est": float(row["ne_resid_est"]),
                    "ne_resid_true": float(row["ne_resid_true"]) if row["ne_resid_true"] else None,
                    "max_rank": int(row["max_rank"]),
                    "seconds": float(row["seconds"]),
                }
            )
    return out
