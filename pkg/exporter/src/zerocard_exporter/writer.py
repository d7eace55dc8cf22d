"""ZCEMB1 container writer.

Layout: magic "ZCEMB1\\n"; u32 little-endian header length; UTF-8 JSON
header {"d", "count", "normalized"}; then per record a u32 key byte
length, the UTF-8 key, and d float32 little-endian components.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ZCEMB1\n"


def write_store(entries: dict[str, np.ndarray], d: int, normalized: bool, path: str | Path) -> None:
    header = json.dumps(
        {"d": d, "count": len(entries), "normalized": normalized},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for key, vec in entries.items():
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (d,):
                raise ValueError(f"vector for {key!r} has shape {vec.shape}, expected ({d},)")
            kb = key.encode("utf-8")
            f.write(struct.pack("<I", len(kb)))
            f.write(kb)
            f.write(vec.tobytes())
