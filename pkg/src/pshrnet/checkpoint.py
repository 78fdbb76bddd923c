"""Bit-exact single-precision checkpoint format.

Layout: magic ``PSHR``, one version byte, little-endian u32 tensor count,
then per tensor: u32 name length, UTF-8 name, u32 rank, u32 extents, and
the raw little-endian float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from pshrnet.tensor import ContractError, Tensor

MAGIC = b"PSHR"
VERSION = 1


def save_checkpoint(params: dict[str, Tensor | np.ndarray], path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as an ordered dict of float32 arrays."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if raw[:4] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    if raw[4] != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {raw[4]}")
    pos = 5

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise ContractError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        n_values = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n_values
        if pos + nbytes > len(raw):
            raise ContractError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(raw, dtype="<f4", count=n_values, offset=pos).reshape(shape)
        pos += nbytes
        out[name] = arr.copy()
    return out


def load_into(params: dict[str, Tensor], loaded: dict[str, np.ndarray]):
    """Assign checkpoint values into model parameters, matched by name."""
    missing = sorted(set(params) - set(loaded))
    extra = sorted(set(loaded) - set(params))
    if missing or extra:
        raise ContractError(
            f"checkpoint/model parameter names differ (missing {missing[:4]}, "
            f"unexpected {extra[:4]})")
    for name, tensor in params.items():
        arr = loaded[name]
        if tuple(arr.shape) != tensor.shape:
            raise ContractError(
                f"checkpoint shape mismatch for {name}: {arr.shape} vs {tensor.shape}")
        tensor.data = arr.astype(np.float64)
