"""Standalone writer for the SSPT tensor container.

Layout (little-endian, no padding):

    magic   4 bytes  "SSPT"
    version u16      1
    kind    u8       0 = feature CxHxW float32, 1 = binary mask HxW uint8
    dims    u32 each (3 for features, 2 for masks)
    payload row-major

This mirrors the consumer's published format byte for byte; the exporter
deliberately has no code dependency on the consumer package.
"""

import struct

import numpy as np

MAGIC = b"SSPT"
VERSION = 1
KIND_FEATURE = 0
KIND_BINARY_MASK = 1


def feature_bytes(data: np.ndarray) -> bytes:
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"feature tensor must be CxHxW, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("feature tensor contains non-finite values")
    header = struct.pack("<4sHB", MAGIC, VERSION, KIND_FEATURE)
    header += struct.pack("<3I", *arr.shape)
    return header + arr.tobytes()


def binary_mask_bytes(data: np.ndarray) -> bytes:
    arr = np.asarray(data)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ValueError(f"mask must be HxW, got shape {arr.shape}")
    vals = arr.astype(np.uint8)
    if not np.array_equal(vals, arr) or not np.isin(vals, (0, 1)).all():
        raise ValueError("binary mask values must be exactly 0 or 1")
    header = struct.pack("<4sHB", MAGIC, VERSION, KIND_BINARY_MASK)
    header += struct.pack("<2I", *vals.shape)
    return header + vals.tobytes()


def write_feature(path, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(feature_bytes(data))


def write_binary_mask(path, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(binary_mask_bytes(data))
