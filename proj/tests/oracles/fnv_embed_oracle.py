#!/usr/bin/env python3
"""Independent feature-hash embedding of a token list, written from the documented
constants only. Prints the float32 vector as C++ hex-float literals.

usage: fnv_embed_oracle.py D SEED TOKEN...
"""
import math
import struct
import sys

OFFSET = 14695981039346656037
PRIME = 1099511628211
SALT = 0x5BD1E9955BD1E995
MASK = (1 << 64) - 1


def fnv1a(data: bytes, basis: int) -> int:
    h = basis
    for byte in data:
        h ^= byte
        h = (h * PRIME) & MASK
    return h


def embed(tokens, d, seed):
    acc = [0.0] * d
    for t in tokens:
        raw = t.encode()
        h1 = fnv1a(raw, OFFSET ^ seed)
        h2 = fnv1a(raw, OFFSET ^ seed ^ SALT)
        acc[h1 % d] += -1.0 if h2 >> 63 else 1.0
    norm = math.sqrt(sum(v * v for v in acc))
    if norm == 0:
        return [0.0] * d
    return [struct.unpack("<f", struct.pack("<f", v / norm))[0] for v in acc]


def main():
    d, seed, tokens = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3:]
    vec = embed(tokens, d, seed)
    print(", ".join(float(v).hex() + "f" if v != 0 else "0.0f" for v in vec))


if __name__ == "__main__":
    main()
