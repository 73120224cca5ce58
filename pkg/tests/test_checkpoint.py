"""Checkpoint file format: byte determinism, integrity, round trips."""

import hashlib
import json
import struct

import numpy as np
import pytest

from adcsr.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
)
from adcsr.models.config import config_hash
from adcsr.models.networks import build_network
from adcsr.models.store import WeightStore
from adcsr.presets import get_preset


@pytest.fixture(scope="module")
def micro_cfg():
    return get_preset("micro-teacher")


@pytest.fixture(scope="module")
def micro_weights(micro_cfg):
    return build_network(micro_cfg, seed=99).weights()


class TestRoundTrip:
    def test_bit_exact_values_and_dtypes(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "a.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        ck = load_checkpoint(p)
        assert ck.config == micro_cfg
        assert sorted(ck.weights.keys()) == sorted(micro_weights.keys())
        for name in micro_weights.keys():
            a, b = micro_weights[name], ck.weights[name]
            assert a.dtype == b.dtype, name
            assert a.shape == b.shape, name
            assert np.array_equal(a, b), name

    def test_mixed_dtypes_survive(self, tmp_path, micro_cfg):
        ws = WeightStore()
        ws["f32"] = np.arange(6, dtype=np.float32).reshape(2, 3)
        ws["f64"] = np.linspace(0.0, 1.0, 5, dtype=np.float64)
        ws["i64"] = np.array([[-(2**40), 2**40]], dtype=np.int64)
        ws["scalar"] = np.float32(3.5).reshape(())
        p = tmp_path / "mixed.ckpt"
        save_checkpoint(p, micro_cfg, ws)
        ck = load_checkpoint(p)
        for name in ws.keys():
            assert ck.weights[name].dtype == ws[name].dtype
            assert np.array_equal(ck.weights[name], ws[name])

    def test_extra_metadata_round_trip(self, tmp_path, micro_cfg, micro_weights):
        extra = {"kind": "teacher", "steps": 12, "nested": {"seed": 7, "tags": ["a", "b"]}}
        p = tmp_path / "x.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights, extra=extra)
        assert load_checkpoint(p).extra == extra

    def test_default_extra_is_empty_dict(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "e.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        assert load_checkpoint(p).extra == {}

    def test_rejects_unserializable_extra(self, tmp_path, micro_cfg, micro_weights):
        with pytest.raises(CheckpointError, match="JSON-serializable"):
            save_checkpoint(tmp_path / "b.ckpt", micro_cfg, micro_weights, extra={"f": object()})


class TestByteDeterminism:
    def test_resave_is_byte_identical(self, tmp_path, micro_cfg, micro_weights):
        p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
        save_checkpoint(p1, micro_cfg, micro_weights, extra={"seed": 1})
        save_checkpoint(p2, micro_cfg, micro_weights, extra={"seed": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_save_cycle_is_byte_identical(self, tmp_path, micro_cfg, micro_weights):
        p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
        save_checkpoint(p1, micro_cfg, micro_weights, extra={"kind": "teacher"})
        ck = load_checkpoint(p1)
        save_checkpoint(p2, ck.config, ck.weights, extra=ck.extra)
        assert hashlib.sha256(p1.read_bytes()).digest() == hashlib.sha256(p2.read_bytes()).digest()


class TestIntegrity:
    def test_manifest_fields(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        man = read_manifest(p)
        assert man["config_hash"] == config_hash(micro_cfg)
        assert set(man["tensors"]) == set(micro_weights.keys())
        entry = man["tensors"][sorted(micro_weights.keys())[0]]
        assert set(entry) == {"dtype", "shape", "offset", "nbytes"}

    def test_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            read_manifest(p)

    def test_rejects_truncated_manifest(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "t.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        raw = p.read_bytes()
        (mlen,) = struct.unpack("<I", raw[8:12])
        p.write_bytes(raw[: 12 + mlen // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            read_manifest(p)

    def test_rejects_truncated_payload(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "t.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        raw = p.read_bytes()
        p.write_bytes(raw[:-16])
        with pytest.raises(CheckpointError, match="past payload end"):
            load_checkpoint(p)

    def test_rejects_config_tamper(self, tmp_path, micro_cfg, micro_weights):
        # Flip a config field inside the manifest; the recorded hash no
        # longer matches the embedded config and the load must fail.
        p = tmp_path / "tamper.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        raw = p.read_bytes()
        (mlen,) = struct.unpack("<I", raw[8:12])
        man = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
        man["config"]["schedule"]["t_index"] = 7
        mbytes = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
        p.write_bytes(MAGIC + struct.pack("<I", len(mbytes)) + mbytes + raw[12 + mlen :])
        with pytest.raises(CheckpointError, match="config hash mismatch"):
            load_checkpoint(p)

    def test_force_overrides_hash_mismatch(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "tamper.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        raw = p.read_bytes()
        (mlen,) = struct.unpack("<I", raw[8:12])
        man = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
        man["config"]["schedule"]["t_index"] = 7
        mbytes = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
        p.write_bytes(MAGIC + struct.pack("<I", len(mbytes)) + mbytes + raw[12 + mlen :])
        ck = load_checkpoint(p, force=True)
        assert ck.config.schedule.t_index == 7

    def test_rejects_shape_nbytes_disagreement(self, tmp_path, micro_cfg):
        ws = WeightStore()
        ws["w"] = np.zeros((2, 2), dtype=np.float32)
        p = tmp_path / "s.ckpt"
        save_checkpoint(p, micro_cfg, ws)
        raw = p.read_bytes()
        (mlen,) = struct.unpack("<I", raw[8:12])
        man = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
        man["tensors"]["w"]["shape"] = [2, 3]
        mbytes = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
        p.write_bytes(MAGIC + struct.pack("<I", len(mbytes)) + mbytes + raw[12 + mlen :])
        with pytest.raises(CheckpointError, match="needs"):
            load_checkpoint(p)

    def test_rejects_missing_manifest_key(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "k.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        raw = p.read_bytes()
        (mlen,) = struct.unpack("<I", raw[8:12])
        man = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
        del man["config_hash"]
        mbytes = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
        p.write_bytes(MAGIC + struct.pack("<I", len(mbytes)) + mbytes + raw[12 + mlen :])
        with pytest.raises(CheckpointError, match="config_hash"):
            read_manifest(p)

    def test_rejects_wrong_schema_version(self, tmp_path, micro_cfg, micro_weights):
        p = tmp_path / "v.ckpt"
        save_checkpoint(p, micro_cfg, micro_weights)
        raw = p.read_bytes()
        (mlen,) = struct.unpack("<I", raw[8:12])
        man = json.loads(raw[12 : 12 + mlen].decode("utf-8"))
        man["schema_version"] = 999
        mbytes = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
        p.write_bytes(MAGIC + struct.pack("<I", len(mbytes)) + mbytes + raw[12 + mlen :])
        with pytest.raises(CheckpointError, match="schema_version"):
            read_manifest(p)


class TestCheckpointObject:
    def test_config_hash_property(self, micro_cfg, micro_weights):
        ck = Checkpoint(config=micro_cfg, weights=micro_weights)
        assert ck.config_hash == config_hash(micro_cfg)
