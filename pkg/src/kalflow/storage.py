"""Columnar-text and JSON persistence for experiment artifacts.

Matrices go to tab-separated text with ``# key: value`` metadata comment
lines and a named header row; documents go to sorted-key JSON. Both
formats are deterministic byte-for-byte given identical content, which is
what makes rerun-equals-rerun checks possible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoFailure

__all__ = ["write_matrix", "read_matrix", "write_json", "read_json"]

_FLOAT_FMT = "%.17g"


def write_matrix(path, array: np.ndarray, columns, meta: dict | None = None) -> None:
    """Write a 2-D array as TSV with metadata comments and named columns."""
    path = Path(path)
    array = np.atleast_2d(np.asarray(array, dtype=float))
    if array.shape[1] != len(columns):
        raise IoFailure(
            f"{path}: {len(columns)} column names for {array.shape[1]} columns"
        )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for key in sorted(meta or {}):
                fh.write(f"# {key}: {(meta or {})[key]}\n")
            fh.write("\t".join(columns) + "\n")
            for row in array:
                fh.write("\t".join(_FLOAT_FMT % v for v in row) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_matrix(path) -> tuple[np.ndarray, list[str], dict]:
    """Read a TSV written by ``write_matrix``; returns (array, columns, meta)."""
    path = Path(path)
    meta: dict[str, str] = {}
    columns: list[str] = []
    rows: list[list[float]] = []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    key, _, value = line[1:].partition(":")
                    meta[key.strip()] = value.strip()
                elif not columns:
                    columns = line.split("\t")
                elif line:
                    rows.append([float(v) for v in line.split("\t")])
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not columns:
        raise IoFailure(f"{path}: missing header row")
    return np.asarray(rows, dtype=float).reshape(len(rows), len(columns)), columns, meta


def write_json(path, document: dict) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n")
    except (OSError, TypeError) as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
