"""Binary checkpoint format.

Layout (little-endian): magic ``CDAE``, format version u32, length-prefixed
config JSON, tensor count u32, then per tensor a length-prefixed UTF-8 name,
ndim u32, dims u32 each, and raw float32 data. Model parameters come first,
optimizer state follows in the same framing under ``adam.`` name prefixes,
and run metadata under ``meta.``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CDAE"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a valid checkpoint."""


def _write_tensor(buf: io.BufferedIOBase, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", array.ndim))
    buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buf.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_exact(buf: io.BufferedIOBase, size: int) -> bytes:
    chunk = buf.read(size)
    if len(chunk) != size:
        raise CheckpointError("truncated checkpoint file")
    return chunk


def _read_tensor(buf: io.BufferedIOBase) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(buf, 4))
    name = _read_exact(buf, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    dims = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim)) if ndim else ()
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(buf, 4 * count), dtype="<f4").reshape(dims)
    return name, data.astype(np.float32)


@dataclass
class CheckpointData:
    version: int
    config: dict
    tensors: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.tensors["meta.step"].reshape(()))


def save_checkpoint(path: str | Path, config: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    """Write a checkpoint; tensor order is preserved so identical state gives identical bytes."""
    config_json = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config_json)))
        fh.write(config_json)
        fh.write(struct.pack("<I", len(tensors)))
        for name, array in tensors:
            _write_tensor(fh, name, np.asarray(array))


def load_checkpoint(path: str | Path) -> CheckpointData:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = json.loads(_read_exact(fh, config_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, array = _read_tensor(fh)
            if name in tensors:
                raise CheckpointError(f"{path}: duplicate tensor {name}")
            tensors[name] = array
    return CheckpointData(version=version, config=config, tensors=tensors)
