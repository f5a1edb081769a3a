"""Portable binary checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"KIERACKP"
    8       4     format version (uint32), currently 1
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header: {"meta": {...},
                                      "arrays": [{"name": str, "shape": [int, ...]}, ...]}
    20+H    ...   every array in header order, C order, little-endian float64

Integer-valued arrays (cardinalities, labels) are stored as float64 too; they
are exact below 2**53.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import ElasticNet

MAGIC = b"KIERACKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = json.dumps({"meta": meta, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic at offset 0)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    offset = 20 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload at byte {offset}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    return header["meta"], arrays


def save_net(path, net: ElasticNet) -> None:
    meta = {"kind": "net", "extractor_dims": list(net.extractor.dims), "widths": net.widths}
    write_checkpoint(path, meta, net.state_arrays())


def load_net(path) -> ElasticNet:
    meta, arrays = read_checkpoint(path)
    return ElasticNet.from_state(meta["extractor_dims"], meta["widths"], arrays)
