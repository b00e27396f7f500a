"""Deterministic 64-bit seed mixing.

One fixed mixing function (splitmix64 over 8-byte chunks) derives every
sub-seed in the toolkit, so parallel and serial runs agree regardless of
scheduling.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(*parts: int | str) -> int:
    """Hash ints and strings into one 64-bit seed, order sensitive."""
    h = 0x6A09E667F3BCC909  # sqrt(2) fractional bits
    for part in parts:
        if isinstance(part, int):
            chunks = [part & _MASK, (part >> 64) & _MASK]
        else:
            data = part.encode("utf-8")
            chunks = [len(data) & _MASK]
            for i in range(0, len(data), 8):
                chunks.append(int.from_bytes(data[i : i + 8], "little"))
        for c in chunks:
            h = _splitmix64(h ^ c)
    return h
