"""
Checkpoint file: version tag, parameter manifest, raw float payload.

    magic (4 bytes) | version (u32) | manifest length (u32) | manifest (utf-8 json)
    | payload: little-endian float32 arrays at the manifest offsets
"""

import json
import logging
from pathlib import Path
from typing import Dict

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, LITTLE_ENDIAN

logger = logging.getLogger("Checkpoint")

PAYLOAD_DTYPE = np.dtype("<f4")


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: Dict[str, np.ndarray]):
    manifest = []
    offset = 0
    payload = bytearray()
    for name, array in arrays.items():
        raw = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
        manifest.append({"name": name, "shape": list(array.shape), "offset": offset})
        payload += raw
        offset += len(raw)
    header = json.dumps(manifest, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(CHECKPOINT_VERSION.to_bytes(4, LITTLE_ENDIAN))
        fp.write(len(header).to_bytes(4, LITTLE_ENDIAN))
        fp.write(header)
        fp.write(payload)
    logger.debug(f"save_checkpoint: {len(manifest)} arrays, {offset} payload bytes to {path}")


def load_checkpoint(path: str | Path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fp:
        buff = fp.read()

    if buff[0:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"load_checkpoint: {path}: bad magic {buff[0:4]!r} at offset 0")
    version = int.from_bytes(buff[4:8], LITTLE_ENDIAN)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"load_checkpoint: {path}: unsupported version {version} at offset 4")
    length = int.from_bytes(buff[8:12], LITTLE_ENDIAN)
    try:
        manifest = json.loads(buff[12:12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"load_checkpoint: {path}: unreadable manifest at offset 12: {e}")

    start = 12 + length
    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        begin = start + entry["offset"]
        end = begin + count * PAYLOAD_DTYPE.itemsize
        if end > len(buff):
            raise CheckpointFormatError(
                f"load_checkpoint: {path}: array {entry['name']} truncated at offset {begin} (file has {len(buff)} bytes)"
            )
        arrays[entry["name"]] = np.frombuffer(buff[begin:end], dtype=PAYLOAD_DTYPE).reshape(entry["shape"]).copy()
    logger.debug(f"load_checkpoint: {len(arrays)} arrays from {path}")
    return arrays
