import json
import struct

import numpy as np
import pytest

from iamseq.checkpoint import (FORMAT_VERSION, decode_checkpoint, encode_checkpoint, load_checkpoint,
                               read_checkpoint, save_checkpoint)
from iamseq.errors import CheckpointIntegrityError, CheckpointVersionError, NumericError
from iamseq.model import IAMBiLSTM, ModelConfig, ParameterRegistry
from iamseq.tensor import Tensor

CFG = ModelConfig(seq_len=5, num_features=6, hidden=7, fc1=8, fc2=4, num_classes=3)


@pytest.fixture
def model():
    return IAMBiLSTM(CFG, 3)


def test_roundtrip_logits_default_model(tmp_path):
    m = IAMBiLSTM(ModelConfig(), 0)
    x = np.random.default_rng(0).normal(size=(8, 10, 52))
    path = save_checkpoint(m.params, m.config, tmp_path / "m.ckpt", seed=0)
    reg, cfg = load_checkpoint(path)
    assert cfg == m.config
    diff = np.abs(IAMBiLSTM.from_registry(cfg, reg)(x).logits.data - m(x).logits.data).max()
    assert diff < 1e-5


def test_values_are_float32_quantised(model, tmp_path):
    path = save_checkpoint(model.params, CFG, tmp_path / "m.ckpt")
    reg, _ = load_checkpoint(path)
    for name, t in model.params.items():
        assert np.array_equal(reg[name].data, t.data.astype(np.float32).astype(np.float64))
    assert reg.names() == model.params.names()


def test_layout(model):
    raw = encode_checkpoint(model.params, CFG, seed=9, metadata={"epoch": 2})
    assert raw[:8] == b"IAMSEQ01"
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    assert header["format_version"] == FORMAT_VERSION == 1
    assert header["seed"] == 9 and header["metadata"] == {"epoch": 2}
    payload = raw[16 + hlen:]
    assert len(payload) == header["payload_bytes"] == 4 * model.params.num_values()
    rec = header["params"][1]
    arr = np.frombuffer(payload[rec["offset"]:rec["offset"] + rec["nbytes"]], "<f4").reshape(rec["shape"])
    assert np.array_equal(arr, model.params[rec["name"]].data.astype(np.float32))


def test_encoding_is_deterministic(model):
    assert encode_checkpoint(model.params, CFG, 1) == encode_checkpoint(model.params, CFG, 1)


def test_metadata_survives(model, tmp_path):
    save_checkpoint(model.params, CFG, tmp_path / "m.ckpt", seed=4, metadata={"epoch": 7, "best_loss": 0.5})
    ck = read_checkpoint(tmp_path / "m.ckpt")
    assert ck.seed == 4 and ck.metadata["epoch"] == 7


@pytest.mark.parametrize("tag", [b"02", b"00", b"x1"])
def test_version_byte(model, tag):
    raw = bytearray(encode_checkpoint(model.params, CFG))
    raw[6:8] = tag
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bytes(raw))


def test_bad_magic(model):
    raw = bytearray(encode_checkpoint(model.params, CFG))
    raw[0:1] = b"J"
    with pytest.raises(CheckpointIntegrityError, match="magic"):
        decode_checkpoint(bytes(raw))


def test_truncated_names_record(model):
    raw = encode_checkpoint(model.params, CFG)
    with pytest.raises(CheckpointIntegrityError, match="classifier.bias"):
        decode_checkpoint(raw[:-2])
    with pytest.raises(CheckpointIntegrityError):
        decode_checkpoint(raw[:40])
    with pytest.raises(CheckpointIntegrityError):
        decode_checkpoint(raw[:10])


def test_corrupt_payload_names_record(model):
    raw = bytearray(encode_checkpoint(model.params, CFG))
    raw[-1] ^= 0xFF
    with pytest.raises(CheckpointIntegrityError, match="classifier.bias.*checksum"):
        decode_checkpoint(bytes(raw))


def test_malformed_header(model):
    raw = encode_checkpoint(model.params, CFG)
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    del header["params"]
    h = json.dumps(header).encode()
    with pytest.raises(CheckpointIntegrityError):
        decode_checkpoint(raw[:8] + struct.pack("<Q", len(h)) + h + raw[16 + hlen:])


def test_empty_registry(tmp_path):
    path = save_checkpoint(ParameterRegistry(), CFG, tmp_path / "e.ckpt")
    reg, cfg = load_checkpoint(path)
    assert len(reg) == 0 and cfg == CFG


def test_refuses_nonfinite_in_float32():
    reg = ParameterRegistry()
    reg.register("w", Tensor(np.array([1e39])))  # overflows float32
    with pytest.raises(NumericError):
        encode_checkpoint(reg, CFG)


def test_no_tmp_left_behind(model, tmp_path):
    save_checkpoint(model.params, CFG, tmp_path / "m.ckpt")
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]
