"""Deterministic seed derivation and config hashing.

All randomness in a run flows from one master seed. Named sub-streams are
derived by hashing the master seed together with string labels, so adding
a consumer never shifts the seeds of existing ones.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

_SEED_MOD = 2 ** 63


def derive_seed(master: int, *labels) -> int:
    """Hash (master, labels...) to a 63-bit integer seed.

    Labels may be strings or ints; the same arguments always produce the
    same seed on any platform.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode("utf-8"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") % _SEED_MOD


def canonical(obj):
    """Reduce dataclasses, tuples and arrays to plain JSON-able values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: canonical(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_hash(obj) -> str:
    """Short stable hash of a config object; equal configs hash equal."""
    payload = json.dumps(canonical(obj), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
