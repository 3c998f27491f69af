"""Named parameter tensors and their binary wire format.

Canonical storage is 32-bit float. The file layout ("CSIP") is:

    magic "CSIP" | u32 version | u32 tensor count
    per tensor: u16 name length | name (utf-8) | u8 rank | u32 dims... |
                float32 little-endian data, row-major

Element bytes are exactly 4 * count_params(params); everything else is header
and is excluded from memory accounting. A parameter set holds every persisted
scalar of a network -- weights, biases, and batchnorm statistics -- so that
4-bytes-per-element accounting and bit-exact reload both hold.
"""

from __future__ import annotations

import struct
from typing import Dict, Iterator, Tuple

import numpy as np

from ..errors import DecodeError, UnsupportedVersionError

MAGIC = b"CSIP"
VERSION = 1


class ParameterSet:
    """Ordered mapping of unique tensor names to float32 arrays."""

    def __init__(self, tensors: Dict[str, np.ndarray] | None = None):
        self._tensors: Dict[str, np.ndarray] = {}
        if tensors:
            for name, arr in tensors.items():
                self.add(name, arr)

    def add(self, name: str, arr: np.ndarray) -> None:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._tensors[name] = np.ascontiguousarray(arr, dtype=np.float32)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._tensors.items())

    def names(self):
        return list(self._tensors)

    def __eq__(self, other) -> bool:
        """Bitwise equality: same names, same order, same bytes."""
        if not isinstance(other, ParameterSet):
            return NotImplemented
        if self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.items(), other.items())
        )

    def __repr__(self) -> str:
        return f"ParameterSet({len(self)} tensors, {count_params(self)} scalars)"


def count_params(params: ParameterSet) -> int:
    """Total stored scalar count across all tensors."""
    return sum(int(arr.size) for _, arr in params.items())


def payload_bytes(params: ParameterSet) -> int:
    """Element bytes only (4 per scalar); the part memory accounting charges."""
    return 4 * count_params(params)


def serialize_params(params: ParameterSet) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"rank too large for {name!r}")
        out.append(struct.pack("<H", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(out)


def deserialize_params(data: bytes) -> ParameterSet:
    if len(data) < 12:
        raise DecodeError(f"parameter blob too short ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise DecodeError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, n_tensors = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"parameter format version {version}, expected {VERSION}")
    off = 12
    ps = ParameterSet()
    for _ in range(n_tensors):
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            if len(data) < off + name_len:
                raise DecodeError("truncated name")
            off += name_len
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
            nbytes = 4 * n_elem
            if len(data) < off + nbytes:
                raise DecodeError(
                    f"truncated payload for {name!r}: need {nbytes} bytes, have {len(data) - off}"
                )
            arr = np.frombuffer(data[off : off + nbytes], dtype="<f4").reshape(dims)
            off += nbytes
        except struct.error as exc:
            raise DecodeError(f"truncated header: {exc}") from exc
        ps.add(name, arr.copy())
    if off != len(data):
        raise DecodeError(f"{len(data) - off} trailing bytes after last tensor")
    return ps
