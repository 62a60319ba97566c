"""Single-file checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then concatenated little-endian float64 payloads. The header carries the
tensor manifest (name, shape, byte offset into the payload) and a free-form
meta dict (model hyperparameters, vocabulary hash, target normalization).
Writes are atomic: temp file in the same directory, then rename.
"""

import json
import os
import struct
import tempfile

import numpy as np

from adstext.errors import ValidationError

MAGIC = b"ADSTXTC1"


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    """Write named float64 arrays plus metadata to one file, atomically."""
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"tensors": manifest, "meta": meta}, sort_keys=True).encode()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint back as (tensors: dict[str, ndarray], meta: dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()

    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise ValidationError(f"{path}: truncated payload for tensor {entry['name']!r}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").astype(np.float64).reshape(shape)
        tensors[entry["name"]] = arr
    return tensors, header["meta"]
