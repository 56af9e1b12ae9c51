#!/usr/bin/env python3
"""Writes the FPT1 files the exporter would emit for one image, independently
of the C++ writer, so the reader is checked against a second implementation.

Outputs (next to this script):
  features.fpt1  f_clip_latent, f_clip_early, f_clip_mid, f_clip_late: float32 [32 x 8 x 8]
  text.fpt1      text_embeddings: float32 [6 x 16], unit rows
  golden.fpt1    one float32 tensor "x" holding 1.0
"""

import math
import random
import struct
from pathlib import Path

F32 = 0


def tensor_record(name, dims, values, dtype=F32):
    encoded = name.encode("utf-8")
    out = struct.pack("<H", len(encoded)) + encoded
    out += struct.pack("<BB", dtype, len(dims))
    out += b"".join(struct.pack("<Q", d) for d in dims)
    out += b"".join(struct.pack("<f", v) for v in values)
    return out


def fpt1(records):
    return b"FPT1" + struct.pack("<HI", 1, len(records)) + b"".join(records)


def main():
    here = Path(__file__).resolve().parent
    rng = random.Random(20240611)

    records = []
    for name in ("f_clip_latent", "f_clip_early", "f_clip_mid", "f_clip_late"):
        dims = (32, 8, 8)
        values = [rng.gauss(0.0, 1.0) for _ in range(32 * 8 * 8)]
        records.append(tensor_record(name, dims, values))
    (here / "features.fpt1").write_bytes(fpt1(records))

    rows = []
    for _ in range(6):
        row = [rng.gauss(0.0, 1.0) for _ in range(16)]
        norm = math.sqrt(sum(v * v for v in row))
        rows.extend(v / norm for v in row)
    (here / "text.fpt1").write_bytes(fpt1([tensor_record("text_embeddings", (6, 16), rows)]))

    (here / "golden.fpt1").write_bytes(fpt1([tensor_record("x", (1,), [1.0])]))


if __name__ == "__main__":
    main()
