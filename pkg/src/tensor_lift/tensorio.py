"""Binary file formats for tensors, masks, and models.

DTF1 tensor: magic "DTF1", order N (u32 LE), N dimension sizes (u64 LE),
then prod(dims) float64 LE values in row-major order.

MSK1 mask: magic "MSK1", order N (u32), N dims (u64), count (u64), then
count sorted ascending u64 linear indices.

MDL1 model: magic "MDL1", kind (u32: 1 = cp, 2 = tucker, 3 = tt), rank
metadata, then each factor / core payload as an embedded DTF1 record.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import CPModel, DenseTensor, ObservationMask, TTModel, TuckerModel

__all__ = [
    "FormatError",
    "read_tensor", "write_tensor",
    "read_mask", "write_mask",
    "read_model", "write_model",
]

_TENSOR_MAGIC = b"DTF1"
_MASK_MAGIC = b"MSK1"
_MODEL_MAGIC = b"MDL1"

_KIND_CP, _KIND_TUCKER, _KIND_TT = 1, 2, 3


class FormatError(ValueError):
    pass


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated file: wanted {count} bytes, got {len(data)}")
    return data


def _write_tensor_body(fh, t: DenseTensor):
    fh.write(_TENSOR_MAGIC)
    fh.write(struct.pack("<I", t.ndim))
    fh.write(np.asarray(t.shape, dtype="<u8").tobytes())
    fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def _read_tensor_body(fh) -> DenseTensor:
    magic = _read_exact(fh, 4)
    if magic != _TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    if n < 1 or n > 64:
        raise FormatError(f"implausible tensor order {n}")
    dims = np.frombuffer(_read_exact(fh, 8 * n), dtype="<u8").astype(np.int64)
    total = int(np.prod(dims))
    data = np.frombuffer(_read_exact(fh, 8 * total), dtype="<f8")
    return DenseTensor(data.reshape(tuple(dims)))


def write_tensor(path, t: DenseTensor):
    with open(path, "wb") as fh:
        _write_tensor_body(fh, t)


def read_tensor(path) -> DenseTensor:
    with open(path, "rb") as fh:
        return _read_tensor_body(fh)


def write_mask(path, mask: ObservationMask):
    with open(path, "wb") as fh:
        fh.write(_MASK_MAGIC)
        fh.write(struct.pack("<I", len(mask.shape)))
        fh.write(np.asarray(mask.shape, dtype="<u8").tobytes())
        fh.write(struct.pack("<Q", len(mask)))
        fh.write(mask.linear.astype("<u8").tobytes())


def read_mask(path) -> ObservationMask:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != _MASK_MAGIC:
            raise FormatError(f"bad mask magic {magic!r}")
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        if n < 1 or n > 64:
            raise FormatError(f"implausible mask order {n}")
        dims = np.frombuffer(_read_exact(fh, 8 * n), dtype="<u8").astype(np.int64)
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        idx = np.frombuffer(_read_exact(fh, 8 * count), dtype="<u8").astype(np.int64)
        return ObservationMask(tuple(dims), idx)


def write_model(path, model):
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        if isinstance(model, CPModel):
            fh.write(struct.pack("<II", _KIND_CP, len(model.factors)))
            fh.write(struct.pack("<I", model.rank))
            _write_tensor_body(fh, DenseTensor(model.weights))
            for f in model.factors:
                _write_tensor_body(fh, DenseTensor(f))
        elif isinstance(model, TuckerModel):
            fh.write(struct.pack("<II", _KIND_TUCKER, len(model.factors)))
            fh.write(np.asarray(model.ranks, dtype="<u8").tobytes())
            _write_tensor_body(fh, model.core)
            for f in model.factors:
                _write_tensor_body(fh, DenseTensor(f))
        elif isinstance(model, TTModel):
            fh.write(struct.pack("<II", _KIND_TT, len(model.cores)))
            fh.write(np.asarray(model.ranks, dtype="<u8").tobytes())
            for c in model.cores:
                _write_tensor_body(fh, DenseTensor(c))
        else:
            raise TypeError(f"cannot serialize {type(model).__name__}")


def read_model(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != _MODEL_MAGIC:
            raise FormatError(f"bad model magic {magic!r}")
        kind, n = struct.unpack("<II", _read_exact(fh, 8))
        if kind == _KIND_CP:
            (_rank,) = struct.unpack("<I", _read_exact(fh, 4))
            weights = _read_tensor_body(fh).data
            factors = [_read_tensor_body(fh).data for _ in range(n)]
            return CPModel(weights, factors)
        if kind == _KIND_TUCKER:
            _read_exact(fh, 8 * n)  # ranks are recoverable from the payloads
            core = _read_tensor_body(fh)
            factors = [_read_tensor_body(fh).data for _ in range(n)]
            return TuckerModel(core, factors)
        if kind == _KIND_TT:
            _read_exact(fh, 8 * (n + 1))
            cores = [_read_tensor_body(fh).data for _ in range(n)]
            return TTModel(cores)
        raise FormatError(f"unknown model kind {kind}")
