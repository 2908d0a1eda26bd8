"""SSPT tensor file format.

Layout (little-endian, no padding):

    magic   4 bytes  "SSPT"
    version u16      1
    kind    u8       0 = feature CxHxW float32
                     1 = binary mask HxW uint8
                     2 = probability mask HxW float32
    dims    u32 each (3 dims for kind 0, 2 for kinds 1 and 2)
    payload row-major, dtype per kind

The reader is total: any byte string either parses to a value or raises a
TensorFormatError subclass naming what is wrong and where. It never
crashes, never allocates from unchecked dims, and round-trips bit-exactly
with the writer.
"""

from __future__ import annotations

import struct
from typing import Union

import numpy as np

from .errors import (
    BadMagicError,
    BadValueError,
    BadVersionError,
    DimOverflowError,
    NonFiniteValueError,
    TensorFormatError,
    TruncatedPayloadError,
)
from .tensor_core import MASK_BINARY, MASK_PROBABILITY, FeatureMap, Mask

MAGIC = b"SSPT"
VERSION = 1
KIND_FEATURE = 0
KIND_BINARY_MASK = 1
KIND_PROBABILITY_MASK = 2

# caps a single tensor at 64M elements; dims are u32 so products are
# validated before any array is materialized
MAX_ELEMENTS = 1 << 26

TensorItem = Union[FeatureMap, Mask]


def write_tensor_bytes(item: TensorItem) -> bytes:
    if isinstance(item, FeatureMap):
        kind = KIND_FEATURE
        dims = item.data.shape
        payload = item.data.astype("<f4").tobytes()
    elif isinstance(item, Mask):
        if item.kind == MASK_BINARY:
            kind = KIND_BINARY_MASK
            payload = item.data.astype(np.uint8).tobytes()
        elif item.kind == MASK_PROBABILITY:
            kind = KIND_PROBABILITY_MASK
            payload = item.data.astype("<f4").tobytes()
        else:
            raise TensorFormatError(
                f"mask kind {item.kind!r} has no serialized form")
        dims = item.data.shape
    else:
        raise TensorFormatError(f"cannot serialize {type(item).__name__}")
    header = struct.pack("<4sHB", MAGIC, VERSION, kind)
    header += struct.pack(f"<{len(dims)}I", *dims)
    return header + payload


def write_tensor_file(path, item: TensorItem) -> None:
    data = write_tensor_bytes(item)
    with open(path, "wb") as fh:
        fh.write(data)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"need {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.data) - self.pos} remain")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def read_tensor_bytes(data: bytes) -> TensorItem:
    cur = _Cursor(data)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", cur.take(2, "version"))
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}, expected {VERSION}")
    (kind,) = struct.unpack("<B", cur.take(1, "kind"))
    if kind not in (KIND_FEATURE, KIND_BINARY_MASK, KIND_PROBABILITY_MASK):
        raise BadValueError(f"unknown kind byte {kind} at offset 6")

    ndims = 3 if kind == KIND_FEATURE else 2
    dims = struct.unpack(f"<{ndims}I", cur.take(4 * ndims, "dims"))
    count = 1
    for i, d in enumerate(dims):
        if d == 0:
            raise DimOverflowError(f"dimension {i} is zero")
        count *= d
    if count > MAX_ELEMENTS:
        raise DimOverflowError(
            f"tensor of {count} elements exceeds the {MAX_ELEMENTS} cap")

    itemsize = 1 if kind == KIND_BINARY_MASK else 4
    expected = count * itemsize
    remaining = len(data) - cur.pos
    if remaining != expected:
        raise TruncatedPayloadError(
            f"payload should be {expected} bytes, found {remaining}")
    payload_off = cur.pos
    raw = data[payload_off:]

    if kind == KIND_BINARY_MASK:
        vals = np.frombuffer(raw, dtype=np.uint8)
        bad = np.nonzero((vals != 0) & (vals != 1))[0]
        if bad.size:
            i = int(bad[0])
            raise BadValueError(
                f"binary mask byte {vals[i]} at offset {payload_off + i} "
                f"(element {i}) is not 0 or 1")
        return Mask(vals.reshape(dims).astype(np.float32), MASK_BINARY)

    vals = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    finite = np.isfinite(vals)
    if not finite.all():
        i = int(np.nonzero(~finite)[0][0])
        raise NonFiniteValueError(
            f"non-finite value at offset {payload_off + 4 * i} (element {i})")
    if kind == KIND_FEATURE:
        return FeatureMap(vals.reshape(dims))
    out_of_range = (vals < 0.0) | (vals > 1.0)
    if out_of_range.any():
        i = int(np.nonzero(out_of_range)[0][0])
        raise BadValueError(
            f"probability {vals[i]!r} at offset {payload_off + 4 * i} "
            f"(element {i}) outside [0, 1]")
    return Mask(vals.reshape(dims), MASK_PROBABILITY)


def read_tensor_file(path) -> TensorItem:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return read_tensor_bytes(data)
    except TensorFormatError as exc:
        # same error class, message prefixed with the offending path
        raise type(exc)(f"{path}: {exc}") from None
