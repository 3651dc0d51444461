"""Self-describing binary container for named arrays plus a JSON metadata blob.

Used for both dataset files and checkpoints. Layout (little-endian):

    magic    8 bytes  b"RRMBNDL1"
    version  u32      container format version (currently 1)
    meta_len u64      length of the UTF-8 JSON metadata that follows
    meta     bytes    JSON object (config echo etc.)
    n_arrays u32
    then per array:
        name_len u32, name UTF-8
        dtype    u8   0=float64, 1=int64, 2=uint8 (bools), 3=complex128
        ndim     u8
        dims     u64 * ndim
        payload  raw row-major bytes

Readers must reject unknown magics and versions.
"""

import json
import struct

import numpy as np

MAGIC = b"RRMBNDL1"
VERSION = 1

_DTYPES = {0: np.float64, 1: np.int64, 2: np.uint8, 3: np.complex128}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1,
          np.dtype(np.uint8): 2, np.dtype(np.complex128): 3}


def _coerce(arr):
    arr = np.asarray(arr)
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64)
    if arr.dtype.kind == "c":
        return arr.astype(np.complex128)
    return arr.astype(np.float64)


def write_bundle(path, meta, arrays):
    """Write `arrays` (dict name -> ndarray) with a JSON `meta` dict."""
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(_coerce(arr))
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def read_bundle(path):
    """Read a container written by write_bundle; returns (meta, arrays)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"not a recognized container file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported container version {version} (expected {VERSION})")
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        (n_arrays,) = struct.unpack("<I", f.read(4))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            if code not in _DTYPES:
                raise ValueError(f"unknown dtype code {code} for array {name!r}")
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
            dtype = np.dtype(_DTYPES[code])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            arr = np.frombuffer(f.read(n_bytes), dtype=dtype).reshape(shape)
            arrays[name] = arr.copy()
    return meta, arrays


def graph_to_arrays(g, prefix=""):
    """Flatten a HetGraph into container arrays."""
    return {
        f"{prefix}f_tx": g.f_tx,
        f"{prefix}f_rx": g.f_rx,
        f"{prefix}e": g.e,
        f"{prefix}edge_mask": g.edge_mask,
    }


def graph_from_arrays(arrays, prefix=""):
    from .hetgraph import HetGraph

    return HetGraph(arrays[f"{prefix}f_tx"], arrays[f"{prefix}f_rx"],
                    arrays[f"{prefix}e"], arrays[f"{prefix}edge_mask"].astype(bool))
