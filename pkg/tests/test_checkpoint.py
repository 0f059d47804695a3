"""Tests for the binary checkpoint container."""
import sys
import os
import struct

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

# Set test environment
os.environ["ENVIRONMENT"] = "test"

import numpy as np
import pytest
from src.errors import CheckpointFormatError, KindMismatchError
from src.inference.binary_qtnn import init_dbm_params, init_rbm_params
from src.inference.grid_mrf import init_gmrf_params
from src.models.params import GrbmParams, ModelKind
from src.models.training import CheckpointMeta
from src.training.checkpoint import (
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def rbm_checkpoint():
    params = init_rbm_params(4, 3, np.random.default_rng(0))
    meta = CheckpointMeta(epoch=7, best_valid_nce=0.61, seed=3, lr=0.01, layers=5, query="bernoulli:0.3")
    return Checkpoint(ModelKind.RBM, params, meta)


class TestRoundTrip:
    """Test that saved parameters come back bit-identical."""

    def test_rbm(self, rbm_checkpoint, tmp_path):
        path = tmp_path / "model.qtbp"
        save_checkpoint(path, rbm_checkpoint)
        loaded = load_checkpoint(path)
        assert loaded.kind == ModelKind.RBM
        for name, value in rbm_checkpoint.params.as_tensors().items():
            np.testing.assert_array_equal(getattr(loaded.params, name), value)
        assert loaded.meta == rbm_checkpoint.meta

    @pytest.mark.parametrize("kind", [ModelKind.DBM, ModelKind.GRBM, ModelKind.GMRF])
    def test_other_kinds(self, kind):
        rng = np.random.default_rng(1)
        params = {
            ModelKind.DBM: lambda: init_dbm_params(3, 2, 2, rng),
            ModelKind.GRBM: lambda: GrbmParams(W=rng.normal(size=(2, 3)), b=rng.normal(size=3), c=rng.normal(size=2)),
            ModelKind.GMRF: lambda: init_gmrf_params(2, (0.8, 0.1, 0.05), rng),
        }[kind]()
        decoded = decode_checkpoint(encode_checkpoint(Checkpoint(kind, params, CheckpointMeta())))
        assert decoded.kind == kind
        for name, value in params.as_tensors().items():
            np.testing.assert_array_equal(getattr(decoded.params, name), value)

    def test_starts_with_magic(self, rbm_checkpoint):
        assert encode_checkpoint(rbm_checkpoint)[:4] == MAGIC


class TestCorruption:
    """Test that malformed files name the failing field."""

    def test_bad_magic(self, rbm_checkpoint):
        data = b"XXXX" + encode_checkpoint(rbm_checkpoint)[4:]
        with pytest.raises(CheckpointFormatError) as exc:
            decode_checkpoint(data)
        assert exc.value.field == "magic"

    def test_bad_version(self, rbm_checkpoint):
        data = bytearray(encode_checkpoint(rbm_checkpoint))
        data[4:8] = struct.pack("<I", 99)
        with pytest.raises(CheckpointFormatError) as exc:
            decode_checkpoint(bytes(data))
        assert exc.value.field == "version"

    def test_truncated(self, rbm_checkpoint):
        data = encode_checkpoint(rbm_checkpoint)
        with pytest.raises(CheckpointFormatError, match="truncated"):
            decode_checkpoint(data[:-3])

    def test_oversized_shape(self, rbm_checkpoint):
        data = encode_checkpoint(rbm_checkpoint)
        shape = struct.pack("<2Q", 3, 4)
        assert data.count(shape) == 1
        with pytest.raises(CheckpointFormatError) as exc:
            decode_checkpoint(data.replace(shape, struct.pack("<2Q", 2 ** 32, 2 ** 32)))
        assert exc.value.field == "W.shape"

    def test_trailing_bytes(self, rbm_checkpoint):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(encode_checkpoint(rbm_checkpoint) + b"\x00")

    def test_unknown_kind(self, rbm_checkpoint):
        data = encode_checkpoint(rbm_checkpoint).replace(b"rbm", b"xyz", 1)
        with pytest.raises(CheckpointFormatError) as exc:
            decode_checkpoint(data)
        assert exc.value.field == "kind"

    def test_empty_file(self):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(b"")


class TestKindCheck:
    """Test the expected-kind guard."""

    def test_mismatch(self, rbm_checkpoint, tmp_path):
        path = tmp_path / "model.qtbp"
        save_checkpoint(path, rbm_checkpoint)
        with pytest.raises(KindMismatchError):
            load_checkpoint(path, expected_kind=ModelKind.GRBM)
        assert load_checkpoint(path, expected_kind=ModelKind.RBM).kind == ModelKind.RBM

    def test_params_must_match_tag(self, rbm_checkpoint):
        with pytest.raises(ValueError):
            Checkpoint(ModelKind.DBM, rbm_checkpoint.params, CheckpointMeta())


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
