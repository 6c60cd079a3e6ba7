"""Atomic file writing and delimited-output helpers.

All numeric CSV output uses Python's shortest round-trip float formatting
so repeated deterministic runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "atomic_write_text",
    "fmt_float",
    "load_features",
    "save_features",
    "sha256_file",
    "write_csv",
    "write_json",
    "write_matrix_csv",
]


def fmt_float(x) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    """Write text so the target is either fully written or absent."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    """Write a delimited table; ints plain, floats full precision."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_matrix_csv(path, matrix) -> None:
    """Dense matrix as CSV rows; NaN cells serialize as 'nan'."""
    m = np.asarray(matrix, dtype=float)
    lines = [",".join(fmt_float(v) for v in row) for row in m]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_features(path, ids, features) -> None:
    """Write per-image feature vectors keyed by image id."""
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    ids = np.asarray(ids, dtype=int)
    if ids.shape[0] != feats.shape[0]:
        raise ValueError("ids and features must have matching length")
    lines = [
        "# mapfeat features v1",
        f"feature_dim {feats.shape[1]}",
        f"n_images {feats.shape[0]}",
    ]
    for k in range(feats.shape[0]):
        lines.append(f"{int(ids[k])} " + " ".join(fmt_float(v) for v in feats[k]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_features(path):
    """Read a feature file back as (ids, features)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "# mapfeat features v1":
        raise ValueError(f"{path}: not a mapfeat feature file")
    try:
        dim = int(lines[1].split()[1])
        n = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed feature header: {exc}") from None
    rows = lines[3:]
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} rows, found {len(rows)}")
    ids = np.empty(n, dtype=int)
    feats = np.empty((n, dim))
    for k, row in enumerate(rows):
        parts = row.split()
        if len(parts) != 1 + dim:
            raise ValueError(f"{path}: line {k + 4}: expected {1 + dim} fields")
        ids[k] = int(parts[0])
        feats[k] = [float(v) for v in parts[1:]]
    return ids, feats
