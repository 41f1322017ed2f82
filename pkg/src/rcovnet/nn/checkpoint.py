"""Weight checkpoints: tag line, JSON header, little-endian float64 payload."""
import json
import os
import tempfile

import numpy as np

from rcovnet.errors import DataError
from rcovnet.nn.spec import ModelSpec
from rcovnet.nn.weights import ModelWeights

MAGIC = b"RCOVNET-WEIGHTS 1\n"


class CheckpointMismatch(DataError):
    pass


def atomic_write_bytes(path, payload):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, weights, meta=None):
    spec = weights.spec
    header = {"spec": spec.to_dict(), "digest": spec.digest(), "n_params": len(weights), "meta": meta or {}}
    head = json.dumps(header, sort_keys=True).encode()
    payload = MAGIC + len(head).to_bytes(8, "little") + head + weights.data.astype("<f8").tobytes()
    atomic_write_bytes(path, payload)


def load_checkpoint(path, spec=None):
    """Return ``(weights, meta)``; verifies the digest against ``spec`` when given."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise DataError(f"{path} is not a weight checkpoint")
    pos = len(MAGIC)
    n_head = int.from_bytes(raw[pos:pos + 8], "little")
    pos += 8
    header = json.loads(raw[pos:pos + n_head])
    pos += n_head
    stored = ModelSpec.from_dict(header["spec"])
    if stored.digest() != header["digest"]:
        raise CheckpointMismatch("checkpoint header is inconsistent with its digest")
    if spec is not None and spec.digest() != header["digest"]:
        raise CheckpointMismatch("checkpoint was written for a different architecture")
    data = np.frombuffer(raw[pos:], dtype="<f8")
    if data.size != header["n_params"]:
        raise DataError(f"expected {header['n_params']} parameters, found {data.size}")
    return ModelWeights(stored, data.astype(np.float64)), header.get("meta", {})
