"""Named-tensor checkpoint files.

Layout (all integers little-endian)::

    magic      4 bytes  b"FDCK"
    version    u16      currently 1
    meta_len   u32      length of the UTF-8 JSON metadata blob that follows
    meta       bytes
    count      u32      number of tensors
    per tensor:
      name_len u16, name (UTF-8)
      ndim     u8, dims u32 * ndim
      payload  float32 little-endian, C order

Arrays are stored as float32; float32 state round-trips bitwise.
"""
import json
import struct

import numpy as np

from ..errors import CheckpointError

MAGIC = b"FDCK"
VERSION = 1


def save_checkpoint(path, state, metadata=None):
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta)), meta, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    """Return ``(state, metadata)``; arrays come back as float32."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        values = struct.unpack_from(fmt, blob, pos)
        pos += size
        return values

    version, meta_len = take("<HI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    metadata = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = take("<I")
    state = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + n_bytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {name}")
        state[name] = np.frombuffer(blob, dtype="<f4", count=n_bytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += n_bytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return state, metadata
