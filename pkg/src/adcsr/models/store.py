"""Flat named-array weight store used at every serialization boundary."""

from __future__ import annotations

import hashlib

import numpy as np


class WeightStoreError(ValueError):
    pass


class WeightStore(dict):
    """dict[str, np.ndarray] with a content digest; payload of every checkpoint."""

    def __setitem__(self, key, value):
        if not isinstance(key, str) or not key:
            raise WeightStoreError(f"weight name must be a non-empty string, got {key!r}")
        arr = np.asarray(value)
        if arr.dtype.kind not in "fiu":
            raise WeightStoreError(f"{key}: unsupported dtype {arr.dtype}")
        super().__setitem__(key, arr)

    def total_params(self) -> int:
        return int(sum(v.size for v in self.values()))

    def digest(self) -> str:
        """SHA-256 over sorted (name, dtype, shape, bytes); bit-exact identity."""
        h = hashlib.sha256()
        for name in sorted(self):
            # ascontiguousarray promotes 0-d to 1-d; reshape restores the rank.
            arr = np.ascontiguousarray(self[name]).reshape(self[name].shape)
            h.update(name.encode("utf-8"))
            h.update(str(arr.dtype).encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def copy(self) -> "WeightStore":
        out = WeightStore()
        for k, v in self.items():
            out[k] = v.copy()
        return out
