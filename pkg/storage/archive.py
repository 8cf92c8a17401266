"""Tensor archive codec.

Layout::

    "DSEE" | version u32 LE | header length u64 LE | JSON header | payload

The header is ``{"meta": {str: str}, "tensors": {name: {"dtype", "shape", "offset"}}}``
serialized with sorted keys and compact separators, then padded with spaces so
the payload starts on a 64-byte boundary. Offsets are relative to the payload
start and 64-aligned; tensor data is little-endian.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Union

import numpy as np

from config import ARCHIVE_ALIGNMENT, ARCHIVE_MAGIC, ARCHIVE_VERSION
from core.exceptions import (
    ArchiveCorruptionError,
    ArchiveFormatError,
    ArchiveTruncatedError,
)
from utils.validators import validate_tensor_name

logger = logging.getLogger(__name__)

PREAMBLE = struct.Struct("<4sIQ")

DTYPES = {
    "f32": np.dtype("<f4"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("u1"),
}
_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.int64): "i64", np.dtype(np.uint8): "u8"}


@dataclass
class TensorArchive:
    """Named tensors plus a string metadata map."""
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorArchive):
            return NotImplemented
        if self.meta != other.meta or set(self.tensors) != set(other.tensors):
            return False
        return all(
            self.tensors[k].dtype == other.tensors[k].dtype
            and self.tensors[k].shape == other.tensors[k].shape
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in self.tensors
        )


def _align(n: int) -> int:
    return -(-n // ARCHIVE_ALIGNMENT) * ARCHIVE_ALIGNMENT


def dtype_tag(arr: np.ndarray) -> str:
    """Archive dtype tag of an array.

    Raises:
        ArchiveFormatError: If the dtype is not float32, int64 or uint8.
    """
    tag = _TAGS.get(np.dtype(arr.dtype).newbyteorder("="))
    if tag is None:
        raise ArchiveFormatError(f"Unsupported tensor dtype {arr.dtype}")
    return tag


def encode_archive(archive: TensorArchive) -> bytes:
    """Serialize an archive; equal archives give identical bytes.

    Raises:
        ArchiveFormatError: On an invalid name, dtype or metadata value.
    """
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(archive.tensors):
        if not validate_tensor_name(name):
            raise ArchiveFormatError(f"Invalid tensor name {name!r}")
        arr = np.asarray(archive.tensors[name])
        tag = dtype_tag(arr)
        data = np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes()
        entries[name] = {"dtype": tag, "shape": [int(d) for d in arr.shape], "offset": offset}
        padded = _align(len(data))
        chunks.append(data + b"\x00" * (padded - len(data)))
        offset += padded
    for key, value in archive.meta.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ArchiveFormatError("Archive metadata must map strings to strings")

    header = json.dumps(
        {"meta": archive.meta, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")
    header += b" " * (_align(PREAMBLE.size + len(header)) - PREAMBLE.size - len(header))
    return PREAMBLE.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, len(header)) + header + b"".join(chunks)


def _parse_header(raw: bytes) -> dict:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveCorruptionError(f"Unreadable archive header: {str(e)}")
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), dict):
        raise ArchiveCorruptionError("Archive header lacks a tensor table")
    meta = header.get("meta", {})
    if not isinstance(meta, dict) or not all(isinstance(v, str) for v in meta.values()):
        raise ArchiveCorruptionError("Archive metadata must map strings to strings")
    return header


def decode_archive(data: bytes) -> TensorArchive:
    """Parse archive bytes.

    Raises:
        ArchiveFormatError: Bad magic, unsupported version or dtype.
        ArchiveCorruptionError: Inconsistent header length, offsets or shapes.
        ArchiveTruncatedError: Data ends before the preamble or a tensor.
    """
    if len(data) < PREAMBLE.size:
        raise ArchiveTruncatedError(f"Archive is {len(data)} bytes, shorter than its preamble")
    magic, version, header_len = PREAMBLE.unpack_from(data)
    if magic != ARCHIVE_MAGIC:
        raise ArchiveFormatError(f"Bad magic bytes {magic!r}")
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(f"Unsupported archive version {version}")
    start = PREAMBLE.size + header_len
    if start > len(data):
        raise ArchiveCorruptionError(f"Header length {header_len} exceeds the file size {len(data)}")
    header = _parse_header(data[PREAMBLE.size:start])
    payload = memoryview(data)[start:]

    tensors: Dict[str, np.ndarray] = {}
    spans = []
    for name, entry in header["tensors"].items():
        try:
            tag = entry["dtype"]
            shape = tuple(int(d) for d in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError):
            raise ArchiveCorruptionError(f"Malformed entry for tensor {name!r}")
        if tag not in DTYPES:
            raise ArchiveFormatError(f"Unknown dtype {tag!r} for tensor {name!r}")
        if not validate_tensor_name(name):
            raise ArchiveCorruptionError(f"Invalid tensor name {name!r}")
        if offset < 0 or offset % ARCHIVE_ALIGNMENT or any(d < 0 for d in shape):
            raise ArchiveCorruptionError(f"Bad offset or shape for tensor {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * DTYPES[tag].itemsize
        if offset + nbytes > len(payload):
            raise ArchiveTruncatedError(f"Tensor {name!r} runs past the end of the file")
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype=DTYPES[tag])
        tensors[name] = arr.astype(DTYPES[tag].newbyteorder("="), copy=True).reshape(shape)

    spans.sort()
    for (_, end, first), (begin, _, second) in zip(spans, spans[1:]):
        if begin < end:
            raise ArchiveCorruptionError(f"Tensors {first!r} and {second!r} overlap")
    return TensorArchive(tensors=tensors, meta=dict(header.get("meta", {})))


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    """Write to a temporary file beside `path`, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_archive(path: Union[str, Path], archive: TensorArchive) -> None:
    """Atomically write an archive file."""
    data = encode_archive(archive)
    atomic_write_bytes(path, data)
    logger.info(f"Wrote {len(archive.tensors)} tensors ({len(data)} bytes) to {path}")


def read_archive(path: Union[str, Path]) -> TensorArchive:
    """Read an archive file.

    Raises:
        OSError: If the file cannot be read.
        ArchiveError: If its contents are invalid.
    """
    with open(path, "rb") as f:
        data = f.read()
    return decode_archive(data)
