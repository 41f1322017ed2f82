"""Dataset files: a raw little-endian float64 payload plus a JSON sidecar.

``name.rcov`` holds ``T * d * d`` reals in ``[t][i][j]`` order and
``name.rcov.json`` holds the metadata (format version, ``d``, ``T``, asset
names, day labels and a free-form note).
"""
import csv
import hashlib
import json
import os

import numpy as np

from rcovnet.errors import DataError, DimensionMismatch
from rcovnet.nn.checkpoint import atomic_write_bytes
from rcovnet.transforms import RCovSeries

FORMAT = "rcov"
VERSION = 1
SYMMETRY_TOL = 1e-9


class DatasetFormatError(DataError):
    pass


def sidecar_path(path):
    return os.fspath(path) + ".json"


def payload_bytes(series):
    return np.ascontiguousarray(series.matrices, dtype="<f8").tobytes()


def write_dataset(path, series):
    """Write payload and sidecar atomically; returns the payload SHA-256."""
    payload = payload_bytes(series)
    meta = {"format": FORMAT, "version": VERSION, "d": series.d, "T": series.T,
            "assets": list(series.assets), "labels": list(series.labels), "note": series.note}
    atomic_write_bytes(path, payload)
    atomic_write_bytes(sidecar_path(path), (json.dumps(meta, indent=1) + "\n").encode())
    return hashlib.sha256(payload).hexdigest()


def read_dataset(path):
    """Load and validate a dataset; every matrix must be symmetric to 1e-9."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DatasetFormatError(f"dataset {path} does not exist")
    if not os.path.exists(sidecar_path(path)):
        raise DatasetFormatError(f"dataset {path} has no sidecar {sidecar_path(path)}")
    try:
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable sidecar: {exc}") from None
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise DatasetFormatError(f"unsupported dataset format {meta.get('format')!r} v{meta.get('version')}")
    T, d = int(meta["T"]), int(meta["d"])
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) != 8 * T * d * d:
        raise DatasetFormatError(f"payload has {len(raw)} bytes, expected {8 * T * d * d}")
    mats = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(T, d, d)
    if not np.all(np.isfinite(mats)):
        raise DatasetFormatError("payload contains non-finite values")
    asym = np.abs(mats - np.swapaxes(mats, 1, 2)).max() if T else 0.0
    if asym > SYMMETRY_TOL:
        raise DatasetFormatError(f"matrices are not symmetric (max deviation {asym:.3g})")
    return RCovSeries(mats, meta.get("labels"), meta.get("assets"), meta.get("note", ""))


def read_matrix_csv(path, note=""):
    """Per-day matrices from CSV.

    The header is ``day,<asset 1>,...,<asset d>``; each day contributes ``d``
    consecutive rows ``<day>,<row i of the matrix>``.  Day labels are kept as
    strings unless every one parses as an integer.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetFormatError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    assets = [a.strip() for a in header[1:]]
    d = len(assets)
    if d == 0 or len(body) % d:
        raise DimensionMismatch(f"{len(body)} data rows do not split into {d}x{d} matrices")
    labels, mats = [], []
    for start in range(0, len(body), d):
        block = body[start:start + d]
        days = {r[0].strip() for r in block}
        if len(days) != 1:
            raise DatasetFormatError(f"rows {start + 2}-{start + d + 1} mix days {sorted(days)}")
        try:
            m = np.array([[float(v) for v in r[1:]] for r in block])
        except ValueError as exc:
            raise DatasetFormatError(f"bad number near row {start + 2}: {exc}") from None
        if m.shape != (d, d):
            raise DimensionMismatch(f"day {block[0][0]} is not {d}x{d}")
        labels.append(block[0][0].strip())
        mats.append(m)
    if all(l.lstrip("-").isdigit() for l in labels):
        labels = [int(l) for l in labels]
    mats = np.stack(mats)
    asym = np.abs(mats - np.swapaxes(mats, 1, 2)).max()
    if asym > SYMMETRY_TOL:
        raise DatasetFormatError(f"CSV matrices are not symmetric (max deviation {asym:.3g})")
    try:
        return RCovSeries(mats, labels, assets, note)
    except DataError as exc:
        raise DatasetFormatError(str(exc)) from None
