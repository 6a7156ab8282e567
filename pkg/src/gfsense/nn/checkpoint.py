"""GFBW checkpoint format: named float32 tensors, little-endian, versioned.

Layout: magic "GFBW" | version u8 | tensor count u32 | then per tensor, in
lexicographic name order: name length u16 | utf-8 name | rank u8 | one u32
per dim | float32 payload (C order). Deterministic: the same tensors always
produce the same bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CorruptFileError, FormatError, UnsupportedVersionError

GFBW_MAGIC = b"GFBW"
GFBW_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> int:
    chunks = [GFBW_MAGIC, struct.pack("<BI", GFBW_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 9:
        raise CorruptFileError(f"{path}: too short for a GFBW header")
    if blob[:4] != GFBW_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {GFBW_MAGIC!r}")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != GFBW_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported GFBW version {version}"
        )
    off = 9
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if len(blob) - off < 4 * n:
                raise CorruptFileError(f"{path}: tensor '{name}' truncated")
            flat = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
            off += 4 * n
            tensors[name] = flat.reshape(dims).astype(np.float64)
    except struct.error as exc:
        raise CorruptFileError(f"{path}: truncated checkpoint ({exc})") from exc
    if off != len(blob):
        raise CorruptFileError(
            f"{path}: {len(blob) - off} trailing bytes after last tensor"
        )
    return tensors
