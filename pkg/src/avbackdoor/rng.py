"""Portable seed derivation.

Every randomized stage (dynamic triggers, sample selection, synthetic data,
weight init) derives its generator from a 64-bit key mixed out of the user
seed plus context labels, so results are stable under reordering and across
platforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def _fold_bytes(state: int, data: bytes) -> int:
    # length is folded first so ("ab","") and ("a","b") differ
    state ^= len(data)
    state, _ = splitmix64(state)
    for off in range(0, len(data), 8):
        chunk = data[off : off + 8]
        state ^= int.from_bytes(chunk, "little")
        state, _ = splitmix64(state)
    return state


def derive_seed(*parts: int | str) -> int:
    """Mix integers and strings into one stable 64-bit seed."""
    state = 0x5DEECE66D
    for part in parts:
        if isinstance(part, str):
            state = _fold_bytes(state, part.encode("utf-8"))
        else:
            state = _fold_bytes(state, (int(part) & _MASK64).to_bytes(8, "little"))
    _, out = splitmix64(state)
    return out


def spawn(*parts: int | str) -> np.random.Generator:
    """A numpy Generator keyed by the given seed parts."""
    return np.random.default_rng(derive_seed(*parts))
