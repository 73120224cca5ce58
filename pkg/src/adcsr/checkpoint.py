"""Single-file checkpoint format.

Layout: an 8-byte magic, a little-endian uint32 manifest length, the manifest
JSON (schema version, embedded architecture config, its hash, a tensor index,
optional extra metadata), then the raw little-endian tensor payload. Nothing
time- or host-dependent is written, so saving the same content twice produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .models.config import ArchConfig, config_hash, from_json as config_from_json, to_json as config_to_json
from .models.store import WeightStore

MAGIC = b"ADCSRCKP"


class CheckpointError(ValueError):
    """Malformed file, unresolvable index, or config-hash mismatch."""


@dataclass
class Checkpoint:
    config: ArchConfig
    weights: WeightStore
    extra: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, cfg: ArchConfig, weights: WeightStore, extra: dict | None = None) -> None:
    """Write config + named arrays to a single file, deterministically."""
    if extra is not None:
        try:
            _canon(extra)
        except TypeError as e:
            raise CheckpointError(f"extra metadata must be JSON-serializable: {e}") from e

    names = sorted(weights.keys())
    index = {}
    blobs = []
    offset = 0
    for name in names:
        # ascontiguousarray promotes 0-d to 1-d; reshape restores the rank.
        arr = np.ascontiguousarray(weights[name]).reshape(np.shape(weights[name]))
        dt = arr.dtype.newbyteorder("<")
        if arr.dtype != dt:
            arr = arr.astype(dt)
        raw = arr.tobytes()
        index[name] = {
            "dtype": dt.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "config": json.loads(config_to_json(cfg)),
        "config_hash": config_hash(cfg),
        "tensors": index,
        "extra": extra or {},
    }
    mbytes = _canon(manifest)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(mbytes)))
        f.write(mbytes)
        for raw in blobs:
            f.write(raw)


def read_manifest(path) -> dict:
    """Parse and structurally validate the manifest without loading tensors."""
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
        if head != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (mlen,) = struct.unpack("<I", f.read(4))
        mbytes = f.read(mlen)
    if len(mbytes) != mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(mbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    for key in ("schema_version", "config", "config_hash", "tensors"):
        if key not in manifest:
            raise CheckpointError(f"{path}: manifest missing {key!r}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: schema_version {manifest['schema_version']} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    return manifest


def load_checkpoint(path, force: bool = False) -> Checkpoint:
    """Read a checkpoint; rejects config-hash mismatches unless force."""
    manifest = read_manifest(path)
    cfg = config_from_json(json.dumps(manifest["config"]))
    recorded = manifest["config_hash"]
    actual = config_hash(cfg)
    if recorded != actual and not force:
        raise CheckpointError(
            f"{path}: config hash mismatch (manifest {recorded[:12]}, "
            f"embedded config {actual[:12]}); pass force to load anyway"
        )
    with open(path, "rb") as f:
        f.seek(len(MAGIC))
        (mlen,) = struct.unpack("<I", f.read(4))
        f.seek(len(MAGIC) + 4 + mlen)
        payload = f.read()

    ws = WeightStore()
    for name, entry in manifest["tensors"].items():
        try:
            dt = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            off = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: bad index entry for {name!r}: {e}") from e
        if off < 0 or off + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {name!r} extends past payload end")
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if expected != nbytes:
            raise CheckpointError(
                f"{path}: tensor {name!r} shape {shape} needs {expected} bytes, index says {nbytes}"
            )
        arr = np.frombuffer(payload, dtype=dt, count=int(np.prod(shape, dtype=np.int64)), offset=off)
        ws[name] = arr.reshape(shape).copy()
    return Checkpoint(config=cfg, weights=ws, extra=manifest.get("extra", {}))
