"""Stable hashing helpers.

Everything that feeds a random generator or a provenance record goes
through these, so identical inputs give identical artifacts across runs
and platforms (Python's builtin ``hash`` is salted per process and never
used here).
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

MASK64 = (1 << 64) - 1


def stable_digest(*parts: Any) -> bytes:
    """32-byte blake2b digest of the parts, order-sensitive.

    Parts are framed (length-prefixed) so ("ab", "c") and ("a", "bc")
    do not collide.
    """
    h = hashlib.blake2b(digest_size=32)
    for part in parts:
        if isinstance(part, bytes):
            data = part
        elif isinstance(part, str):
            data = part.encode("utf-8")
        elif isinstance(part, int):
            data = str(part).encode("ascii")
        else:
            data = json.dumps(part, sort_keys=True, separators=(",", ":")).encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return h.digest()


def derive_seed(*parts: Any) -> int:
    """A 64-bit seed deterministically derived from the parts."""
    return int.from_bytes(stable_digest(*parts)[:8], "little") & MASK64


def config_hash(payload: Any) -> str:
    """Short hex hash of a JSON-serializable configuration."""
    return stable_digest(payload).hex()[:16]
