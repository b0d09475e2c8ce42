#!/usr/bin/env python3
"""Writes one hex dump per message type, built with struct from the wire
layout description alone (independent of the C++ encoder)."""

import pathlib
import struct

HERE = pathlib.Path(__file__).resolve().parent
TYPES = {"advertisement": 1, "intention": 2, "prescription": 3, "acceptance": 4,
         "fin": 5, "cancel": 6, "ack": 7, "cam": 8}


def header(kind, sender, target, seq, gen_ms):
    return struct.pack("<BBIIHBQ", TYPES[kind], 1, sender, target, seq, 1, gen_ms)


def block(points):
    out = struct.pack("<H", len(points))
    for x, y, t in points:
        out += struct.pack("<ddd", x, y, t)
    return out


# Same formulas as the fixtures in test_codec.cpp.
INTENTION = [(100.0 + 5.0 * k, -3.5, 10.0 + 0.5 * k) for k in range(50)]
PRESCRIPTION = [(200.0 + 4.0 * k, -3.5, 20.0 + 0.25 * k) for k in range(52)]
SELECTED = [(10.0, 0.0, 1.0), (12.5, 0.0, 1.5), (15.0, -0.25, 2.0)]

MESSAGES = {
    "advertisement": header("advertisement", 1, 0, 7, 1000),
    "intention": header("intention", 2, 1, 3, 1020) + block(INTENTION),
    "prescription": header("prescription", 1, 2, 0, 2010) + block(PRESCRIPTION),
    "acceptance": header("acceptance", 2, 1, 1, 2040) + struct.pack("<B", 1) + block(SELECTED),
    "fin": header("fin", 1, 2, 0, 14830),
    "cancel": header("cancel", 1, 4, 2, 2010) + struct.pack("<B", 4),
    "ack": header("ack", 1, 2, 5, 1040) + struct.pack("<BH", 2, 3),
    "cam": header("cam", 2, 0, 65535, 123456789012) + struct.pack("<dddd", 123.5, -3.5, 8.25, 0.0),
}


def dump(data):
    lines = []
    for i in range(0, len(data), 16):
        lines.append(" ".join(f"{b:02x}" for b in data[i:i + 16]))
    return "\n".join(lines) + "\n"


def main():
    for name, data in MESSAGES.items():
        text = f"# {name}: {len(data)} bytes\n" + dump(data)
        (HERE / f"{name}.hex").write_text(text)


if __name__ == "__main__":
    main()
