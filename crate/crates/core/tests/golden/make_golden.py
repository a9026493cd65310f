"""Writes one packed-matrix file per format plus its expected codes.

Independent of the Rust codec: bit layout is LSB-first within each row,
rows padded to whole bytes, base-3 packs five trits per byte with the first
trit least significant.
"""

import json
import struct
from pathlib import Path

FORMATS = {
    # name: (tag, bits per code or None for base-3, number of codes)
    "pack1": (0, 1, 2),
    "trit243": (1, None, 3),
    "pack2": (2, 2, 4),
    "ternary2bit": (3, 2, 3),
    "pack3": (4, 3, 8),
    "pack4": (5, 4, 16),
}
ROWS, COLS = 3, 11
SCALES = [0.5, 1.25, 3.0]


def codes_for(n_codes):
    return [[(r * 5 + c * 3 + c // 4) % n_codes for c in range(COLS)] for r in range(ROWS)]


def pack_row(row, bits):
    if bits is None:
        out = bytearray()
        for i in range(0, len(row), 5):
            value = 0
            for j, code in enumerate(row[i : i + 5]):
                value += code * 3**j
            out.append(value)
        return bytes(out)
    acc = 0
    for i, code in enumerate(row):
        acc |= code << (i * bits)
    return acc.to_bytes((len(row) * bits + 7) // 8, "little")


def main():
    here = Path(__file__).parent
    for name, (tag, bits, n_codes) in FORMATS.items():
        codes = codes_for(n_codes)
        blob = b"PQPK" + struct.pack("<BBIII", 1, tag, ROWS, COLS, len(SCALES))
        blob += struct.pack(f"<{len(SCALES)}f", *SCALES)
        blob += b"".join(pack_row(row, bits) for row in codes)
        (here / f"{name}.pqpk").write_bytes(blob)
        (here / f"{name}.json").write_text(
            json.dumps({"format": name, "scales": SCALES, "codes": codes}, indent=1) + "\n"
        )


if __name__ == "__main__":
    main()
