"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"CYCASRCK"
    offset 8   u32       format version (currently 1)
    offset 12  u64       header length N in bytes
    offset 20  N bytes   UTF-8 JSON header
    offset 20+N          payload: float64 little-endian values, row-major,
                         one block per entry in header["entries"] order

The JSON header holds ``kind`` ("model" or "lm"), ``arch`` (the architecture
descriptor), ``meta`` (free-form run metadata) and ``entries``: a list of
``{"name", "shape"}`` records. Entry names starting with ``optim.`` carry
optimizer accumulators. Round trips are bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CYCASRCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    arch: dict
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith("optim.")}

    def optimizer(self) -> dict[str, np.ndarray]:
        return {k[len("optim."):]: v for k, v in self.arrays.items() if k.startswith("optim.")}


def write_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    names = list(ckpt.arrays)
    header = {
        "kind": ckpt.kind,
        "arch": ckpt.arch,
        "meta": ckpt.meta,
        "entries": [{"name": n, "shape": list(np.shape(ckpt.arrays[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(ckpt.arrays[n], dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    pos = 20 + hlen
    arrays = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if pos + 8 * count > len(raw):
            raise CheckpointError(f"{path}: payload truncated at entry {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
        pos += 8 * count
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing or missing payload bytes")
    return Checkpoint(header["kind"], header["arch"], arrays, header.get("meta", {}))
