"""Independent generator for the reference-embedder golden vectors.

Prints `sentence<TAB>hex-bits...` for dim=8 using FNV-1a 64 token hashes,
a splitmix64 stream per token, mean pooling and L2 normalisation.
"""
import math
import struct

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


def splitmix64(state: int):
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        yield z ^ (z >> 31)


def embed(sentence: str, dim: int):
    tokens = sentence.lower().split() or ["∅"]
    acc = [0.0] * dim
    for tok in tokens:
        stream = splitmix64(fnv1a64(tok.encode("utf-8")))
        for k in range(dim):
            acc[k] += next(stream) / 2.0**63 - 1.0
    acc = [a / len(tokens) for a in acc]
    norm = math.sqrt(sum(a * a for a in acc))
    return [struct.unpack("<I", struct.pack("<f", a / norm))[0] for a in acc]


SENTENCES = [
    "Marley was dead: to begin with.",
    "Hello world.",
    "alpha beta",
    "beta alpha",
    "",
    "The quick brown fox jumps over the lazy dog.",
    "A B C",
    "Scrooge signed it.",
    "one",
    "It was the best of times, it was the worst of times.",
]

if __name__ == "__main__":
    for s in SENTENCES:
        print(repr(s), ", ".join("0x%08x" % b for b in embed(s, 8)))
    xs, ys = [1, 2, 3, 4], [1, 2, 3, 5]
    mx, my = sum(xs) / 4, sum(ys) / 4
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    print("pearson", sxy / math.sqrt(sxx * syy))
