import struct

import numpy as np
import pytest

from signnet.checkpoint import FORMAT_VERSION, MAGIC, decode, encode, load_checkpoint, read_checkpoint, save_checkpoint
from signnet.data import Dataset
from signnet.errors import CheckpointError
from signnet.network import build_network, miniature_spec
from signnet.optim import OptState, SGDConfig, msra_init, predict, train_epoch


@pytest.fixture
def trained():
    net = msra_init(build_network(miniature_spec()), 0)
    r = np.random.default_rng(0)
    data = Dataset(r.uniform(size=(20, 1, 12, 12)), np.arange(20) % 5, num_classes=5)
    state = OptState()
    train_epoch(net, data, SGDConfig(), state)
    return net, state, data


def test_encode_decode_round_trip():
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(3.5), "c": np.zeros((0, 4))}
    digest, meta, out = decode(encode("ab" * 32, {"k": [1, 2]}, tensors))
    assert digest == "ab" * 32 and meta == {"k": [1, 2]}
    assert out.keys() == tensors.keys()
    for k in tensors:
        assert out[k].shape == tensors[k].shape
        np.testing.assert_array_equal(out[k], tensors[k])


def test_model_round_trip_is_bitwise(tmp_path, trained):
    net, state, data = trained
    path = tmp_path / "m.sgnc"
    save_checkpoint(path, net, state, {"note": "x"})
    fresh = build_network(miniature_spec())
    restored, meta = load_checkpoint(path, fresh)
    assert meta["note"] == "x" and meta["spec"] == net.spec.to_dict()
    assert (restored.step, restored.epoch) == (state.step, state.epoch) == (1, 1)
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(fresh.state_dict()[k], v)
    assert restored.velocity.keys() == state.velocity.keys()
    np.testing.assert_array_equal(predict(fresh, data.images), predict(net, data.images))


def test_running_statistics_are_saved(tmp_path, trained):
    net, state, _ = trained
    save_checkpoint(tmp_path / "m.sgnc", net, state)
    _, _, tensors = read_checkpoint(tmp_path / "m.sgnc")
    buffers = [k for k in tensors if k.startswith("buffer/")]
    assert buffers and all(k.endswith((".running_mean", ".running_var", ".batches_seen")) for k in buffers)
    assert any(k.startswith("velocity/") for k in tensors)


def test_digest_mismatch_refused(tmp_path, trained):
    net, state, _ = trained
    save_checkpoint(tmp_path / "m.sgnc", net, state)
    other = miniature_spec()
    other.layers[8]["rate"] = 0.5
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(tmp_path / "m.sgnc", build_network(other))


@pytest.mark.parametrize("where", [0, 20, -40, -1])
def test_any_corrupted_byte_is_detected(tmp_path, trained, where):
    net, state, _ = trained
    path = tmp_path / "m.sgnc"
    save_checkpoint(path, net, state)
    blob = bytearray(path.read_bytes())
    blob[where] ^= 0x01
    with pytest.raises(CheckpointError):
        decode(bytes(blob))


def test_truncation_and_missing_file(tmp_path):
    blob = encode("00" * 32, {}, {"a": np.ones(3)})
    with pytest.raises(CheckpointError):
        decode(blob[:-5])
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "absent.sgnc")


def test_unknown_version_rejected():
    import hashlib

    body = MAGIC + struct.pack("<I", FORMAT_VERSION + 1) + bytes(32) + struct.pack("<I", 2) + b"{}" + struct.pack("<I", 0)
    with pytest.raises(CheckpointError, match="version"):
        decode(body + hashlib.sha256(body).digest())
