"""Binary tensor container.

Layout, all little endian:

    offset 0   magic ``DGWT`` (4 bytes)
    offset 4   u16 version, currently 1
    offset 6   u16 rank, at most 8
    offset 8   rank u32 extents
    then       float64 payload, row major, prod(extents) values

Rank 0 is a scalar: no extents, exactly one payload value. Malformed files
raise :class:`~dgwt.errors.FormatError` with the byte offset of the problem.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensors import Tensor

MAGIC = b"DGWT"
VERSION = 1
MAX_RANK = 8

_HEADER = struct.Struct("<4sHH")


def write_tensor(path, tensor) -> None:
    """Write a :class:`Tensor` (or ndarray) to ``path``."""
    if not isinstance(tensor, Tensor):
        tensor = Tensor.from_array(tensor)
    if tensor.rank > MAX_RANK:
        raise FormatError(
            f"rank {tensor.rank} exceeds the container maximum {MAX_RANK}"
        )
    parts = [_HEADER.pack(MAGIC, VERSION, tensor.rank)]
    parts.append(struct.pack(f"<{tensor.rank}I", *tensor.shape))
    parts.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensor(path) -> Tensor:
    """Read a tensor container, validating the header field by field."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"truncated header at offset {len(raw)}: need {_HEADER.size} bytes"
        )
    magic, version, rank = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic at offset 0: {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} at offset 6 exceeds maximum {MAX_RANK}")
    extents_end = _HEADER.size + 4 * rank
    if len(raw) < extents_end:
        raise FormatError(
            f"truncated extents at offset {len(raw)}: need {extents_end} bytes"
        )
    extents = struct.unpack_from(f"<{rank}I", raw, _HEADER.size)
    for i, e in enumerate(extents):
        if e == 0:
            raise FormatError(f"zero extent at offset {_HEADER.size + 4 * i}")
    count = 1
    for e in extents:
        count *= e
    payload_bytes = 8 * count
    found = len(raw) - extents_end
    if found < payload_bytes:
        raise FormatError(
            f"truncated payload at offset {len(raw)}: "
            f"expected {payload_bytes} bytes, found {found}"
        )
    if found > payload_bytes:
        raise FormatError(
            f"trailing data at offset {extents_end + payload_bytes}: "
            f"{found - payload_bytes} extra bytes"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=extents_end)
    return Tensor(tuple(extents), data.astype(np.float64))
