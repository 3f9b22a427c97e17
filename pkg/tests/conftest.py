"""Shared fixtures and independent reference implementations.

The reference functions here are deliberately written from the published
algorithm definitions, not by calling the code under test (or the stdlib
primitives it uses), so golden values in the tests are genuinely
independent.
"""
from __future__ import annotations

import pytest

CRC32_POLY = 0xEDB88320
LCG_A = 6364136223846793005
LCG_C = 1442695040888963407


def crc32_reference(data: bytes, crc: int = 0) -> int:
    """Bit-by-bit CRC-32: reflected poly 0xEDB88320, init and final xor
    0xFFFFFFFF. Check value: crc32_reference(b"123456789") == 0xCBF43926."""
    crc ^= 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (CRC32_POLY if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def lcg_keystream_reference(key: bytes, length: int) -> bytes:
    """Keystream byte i = top 8 bits of the LCG state after i+1 steps,
    seeded with the key as a big-endian u64."""
    state = int.from_bytes(key, "big")
    out = bytearray()
    for _ in range(length):
        state = (LCG_A * state + LCG_C) % (1 << 64)
        out.append(state >> 56)
    return bytes(out)


@pytest.fixture
def tmp_home(tmp_path, monkeypatch):
    """Isolated data directory: XBASE_HOME plus cleared bootstrap caches."""
    home = tmp_path / "home"
    monkeypatch.setenv("XBASE_HOME", str(home))
    import xbase.namer
    import xbase.netstore

    monkeypatch.setattr(xbase.netstore, "_root_stores", {})
    monkeypatch.setattr(xbase.namer, "_root_namers", {})
    return home
