"""Versioned binary tensor records.

Used for both weight checkpoints and spilled activations. Layout (all
little-endian):

    magic   4 bytes  b"FDPK"
    version u32      currently 1
    count   u32      number of records
    per record:
      name_len u16, name utf-8 bytes
      dtype_code u8 (0=float32, 1=float64, 2=int64)
      ndim u8, dims u64 * ndim
      payload: C-order raw element bytes
"""

import struct

import numpy as np

from ..errors import IntegrityError

MAGIC = b"FDPK"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def write_tensor_file(path, named_arrays):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(named_arrays)))
        for name, arr in named_arrays:
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODE_FOR:
                raise IntegrityError(f"unsupported dtype {arr.dtype} for record {name!r}")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor_file(path):
    """Returns an ordered list of (name, array) pairs."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise IntegrityError(f"{path}: bad magic, not a tensor record file")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise IntegrityError(f"{path}: unsupported format version {version}")
        off = 12
        out = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            code, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}Q", blob, off)
            off += 8 * ndim
            dtype = _DTYPE_CODES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            payload = blob[off : off + nbytes]
            if len(payload) != nbytes:
                raise IntegrityError(f"{path}: truncated payload for record {name!r}")
            off += nbytes
            out.append((name, np.frombuffer(payload, dtype=dtype).reshape(dims).copy()))
        if off != len(blob):
            raise IntegrityError(f"{path}: {len(blob) - off} trailing bytes")
        return out
    except (struct.error, KeyError) as exc:
        raise IntegrityError(f"{path}: corrupted record stream ({exc})") from exc


def save_weights(path, weights):
    write_tensor_file(path, list(weights.flat_items()))


def load_weights(path, graph=None):
    from .network import ModelWeights

    weights = ModelWeights.from_flat(read_tensor_file(path))
    if graph is not None:
        weights.check_matches(graph)
    return weights
