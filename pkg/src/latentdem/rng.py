"""Named, counter-based random streams derived from a single run seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Philox generator keyed by (seed, name); independent across names."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_name_key(name),))
    return np.random.Generator(np.random.Philox(ss))


def stream_position(rng: np.random.Generator) -> int:
    """Number of 64-bit words consumed so far; written to traces for auditing."""
    state = rng.bit_generator.state
    return int(state["state"]["counter"][0]) * 4 - 4 + int(state["buffer_pos"])
