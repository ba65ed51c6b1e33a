"""
检查点读写测试
"""
import json

import numpy as np
import pytest

from models.errors import CheckpointError
from models.tasks import TaskDescriptor, TaskName
from models.training import TrainConfig, TrainedModel
from services.checkpoint_service import checkpoint_service
from services.training_service import init_params


@pytest.fixture
def checkpoint(make_params, make_readout):
    params = make_params(M=5, P=2, K=3)
    trained = TrainedModel(model=params, readout=make_readout(2, 5))
    descriptor = TaskDescriptor(name=TaskName.CONTEXTUAL, params={"T_seq": 10}, seed=4)
    return checkpoint_service.build(trained, descriptor, TrainConfig(seed=4, tau=0.25))


def test_build_checkpoint_records_dimensions(checkpoint):
    assert (checkpoint.M, checkpoint.P, checkpoint.K, checkpoint.O) == (5, 2, 3, 2)
    assert checkpoint.seed == 4
    assert checkpoint.config["tau"] == 0.25
    assert checkpoint.encoder is None


def test_save_load_save_is_byte_identical(checkpoint, tmp_path):
    """save -> load -> save 得到逐字节一致的文件"""
    first = checkpoint_service.save(checkpoint, tmp_path / "a" / "checkpoint.json")
    loaded = checkpoint_service.load(first)
    second = checkpoint_service.save(loaded, tmp_path / "b" / "checkpoint.json")
    assert first.read_bytes() == second.read_bytes()
    assert checkpoint_service.file_sha256(first) == checkpoint_service.file_sha256(second)
    assert loaded.model.allclose(checkpoint.model)
    np.testing.assert_array_equal(loaded.readout.D, checkpoint.readout.D)


def test_loaded_parameters_are_bit_exact(checkpoint):
    loaded = checkpoint_service.loads(checkpoint_service.dumps(checkpoint))
    for name in ("A_diag", "W", "C", "h"):
        assert np.array_equal(getattr(loaded.model, name), getattr(checkpoint.model, name))
    assert loaded.task == checkpoint.task


def test_encoder_decoder_checkpoint_uses_encoder_dimensions():
    encoder, _ = init_params(6, 2, 13, 7, seed=0)
    decoder, readout = init_params(6, 1, 1, 7, seed=1)
    trained = TrainedModel(model=decoder, readout=readout, encoder=encoder)
    checkpoint = checkpoint_service.build(trained, TaskDescriptor(name=TaskName.SCAN), TrainConfig())
    assert (checkpoint.K, checkpoint.P) == (13, 2)
    restored = checkpoint_service.trained_model(checkpoint_service.loads(checkpoint_service.dumps(checkpoint)))
    assert restored.encoder.allclose(encoder)
    assert restored.model.allclose(decoder)


def test_nonzero_linear_a_entries_are_rejected(checkpoint):
    """A 的线性部分非零时拒绝加载，而不是静默置零"""
    raw = json.loads(checkpoint_service.dumps(checkpoint))
    raw["model"]["A_diag"][0] = 0.5
    with pytest.raises(CheckpointError) as exc:
        checkpoint_service.loads(json.dumps(raw))
    assert exc.value.details["indices"] == [0]


@pytest.mark.parametrize("version", [None, 0, 2, "1"])
def test_unsupported_schema_version(checkpoint, version):
    raw = json.loads(checkpoint_service.dumps(checkpoint))
    raw["schema_version"] = version
    with pytest.raises(CheckpointError):
        checkpoint_service.loads(json.dumps(raw))


def test_malformed_checkpoints(checkpoint, tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint_service.loads("{not json")
    with pytest.raises(CheckpointError):
        checkpoint_service.loads("[1, 2]")
    raw = json.loads(checkpoint_service.dumps(checkpoint))
    del raw["readout"]
    with pytest.raises(CheckpointError):
        checkpoint_service.loads(json.dumps(raw))
    raw = json.loads(checkpoint_service.dumps(checkpoint))
    raw["model"]["W"] = [[0.0]]
    with pytest.raises(CheckpointError):
        checkpoint_service.loads(json.dumps(raw))
    with pytest.raises(CheckpointError):
        checkpoint_service.load(tmp_path / "missing.json")

