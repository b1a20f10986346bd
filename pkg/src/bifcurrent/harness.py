"""Experiment harness: seeding, configuration, pipelines, manifests.

Only the seed-derivation contract lives here so far; configuration loading,
the experiment pipelines and manifest handling are added alongside the CLI.
Heavier sibling modules are imported lazily inside the functions that need
them so that utility imports (``derive_seed``) stay dependency-free.
"""

from __future__ import annotations

__all__ = [
    "derive_seed",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def derive_seed(master: int, task_path: str) -> int:
    """Derive a 64-bit task seed from a master seed and a task-path label.

    The derivation is 64-bit FNV-1a over the eight little-endian bytes of
    ``master`` (reduced mod 2**64) followed by the UTF-8 bytes of
    ``task_path``.  It is stable across platforms and Python versions, and
    distinct task paths give distinct seeds for all practical purposes.
    """
    h = _FNV_OFFSET
    for byte in (int(master) & _MASK64).to_bytes(8, "little"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    for byte in task_path.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h
