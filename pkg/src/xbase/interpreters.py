"""Bit-string to bit-string transformers.

Run-length coding, a keyed XOR stream transformer, identity, and pipeline
composition. Every interpreter here is a pure function of (input, config):
repeated calls agree byte for byte.

The XOR transformer's keystream is a 64-bit linear congruential generator,
so it is NOT cryptography and provides no secrecy against anyone who cares.
It exists to exercise the interpreter slot; do not use it to protect data.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import BitString, Interpreter, MalformedInputError

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
_MASK64 = 2**64 - 1

CIPHER_KEY_LEN = 8
MAX_RUN = 255


def rle_compress(data: BitString) -> BitString:
    """Encode data as (count, byte) pairs; runs over 255 split greedily.

    Incompressible input grows to at most twice its length (no escape
    coding); output length is always even.
    """
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        byte = data[i]
        run = 1
        while run < MAX_RUN and i + run < n and data[i + run] == byte:
            run += 1
        out.append(run)
        out.append(byte)
        i += run
    return bytes(out)


def rle_expand(data: BitString) -> BitString:
    """Inverse of rle_compress on its image."""
    if len(data) % 2:
        raise MalformedInputError("run-length data must be whole (count, byte) pairs")
    out = bytearray()
    for i in range(0, len(data), 2):
        count = data[i]
        if count == 0:
            raise MalformedInputError(f"zero run count at offset {i}")
        out.extend(data[i + 1 : i + 2] * count)
    return bytes(out)


def keystream(key: bytes, length: int) -> bytes:
    """The LCG keystream for an 8-byte key: state seeds from the key as a
    big-endian u64; byte i is the top 8 bits of the state after i+1 steps."""
    if len(key) != CIPHER_KEY_LEN:
        raise ValueError(f"cipher key must be exactly {CIPHER_KEY_LEN} bytes")
    state = int.from_bytes(key, "big")
    out = bytearray(length)
    for i in range(length):
        state = (LCG_MULTIPLIER * state + LCG_INCREMENT) & _MASK64
        out[i] = state >> 56
    return bytes(out)


def xor_cipher(data: BitString, key: bytes) -> BitString:
    """XOR data against the keystream; applying it twice restores the input."""
    return bytes(a ^ b for a, b in zip(data, keystream(key, len(data))))


class IdentityInterpreter(Interpreter):
    def interpret(self, data: BitString) -> BitString:
        return data


class RleCompressor(Interpreter):
    def interpret(self, data: BitString) -> BitString:
        return rle_compress(data)


class RleExpander(Interpreter):
    def interpret(self, data: BitString) -> BitString:
        return rle_expand(data)


class XorCipher(Interpreter):
    """Involutive keyed transformer. Insecure by construction; see module docs."""

    def __init__(self, key: bytes):
        if not isinstance(key, bytes) or len(key) != CIPHER_KEY_LEN:
            raise ValueError(f"cipher key must be exactly {CIPHER_KEY_LEN} bytes")
        self._key = key

    def interpret(self, data: BitString) -> BitString:
        return xor_cipher(data, self._key)


@dataclass(frozen=True)
class Pipeline(Interpreter):
    """Applies first, then second; inner errors propagate unchanged."""

    first: Interpreter
    second: Interpreter

    def interpret(self, data: BitString) -> BitString:
        return self.second.interpret(self.first.interpret(data))


def compose(first: Interpreter, second: Interpreter) -> Interpreter:
    return Pipeline(first, second)
