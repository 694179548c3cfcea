import json
import struct

import numpy as np
import pytest

from attnsi.errors import WeightFormatError
from attnsi.vit import ViTConfig, forward, random_init
from attnsi.weights_io import load_weights, save_weights


@pytest.fixture()
def saved(tmp_path, small_config, small_weights):
    path = tmp_path / "w.vitw"
    save_weights(small_weights, path)
    return path


class TestRoundTrip:
    def test_bit_exact(self, saved, small_config, small_weights):
        loaded = load_weights(saved, small_config)
        assert set(loaded.tensors) == set(small_weights.tensors)
        for k, v in small_weights.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[k], v)

    def test_deterministic_bytes(self, tmp_path, small_weights):
        p1, p2 = tmp_path / "a.vitw", tmp_path / "b.vitw"
        save_weights(small_weights, p1)
        save_weights(small_weights, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_weights_run(self, saved, small_config):
        weights = load_weights(saved, small_config)
        img = np.random.default_rng(0).standard_normal(small_config.n_pixels)
        out = forward(small_config, weights, img)
        assert np.isfinite(out.logits).all()


class TestHeaderLayout:
    def test_magic_version_manifest(self, saved):
        raw = saved.read_bytes()
        assert raw[:4] == b"VITW"
        assert struct.unpack_from("<I", raw, 4)[0] == 1
        mlen = struct.unpack_from("<Q", raw, 8)[0]
        manifest = json.loads(raw[16 : 16 + mlen])
        assert manifest[0]["name"] == "patch_embed.weight"
        assert all(rec["dtype"] == "f32" for rec in manifest)
        total = sum(rec["byte_length"] for rec in manifest)
        assert len(raw) == 16 + mlen + total


class TestLoadErrors:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vitw"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(WeightFormatError, match="magic"):
            load_weights(p)

    def test_bad_version(self, saved, tmp_path):
        raw = bytearray(saved.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        p = tmp_path / "v99.vitw"
        p.write_bytes(bytes(raw))
        with pytest.raises(WeightFormatError, match="version"):
            load_weights(p)

    def test_truncated_data_names_tensor(self, saved, tmp_path):
        # head.bias is the last 8 bytes of the data section; removing 4
        # truncates exactly that tensor.
        raw = saved.read_bytes()
        p = tmp_path / "trunc.vitw"
        p.write_bytes(raw[: len(raw) - 4])
        with pytest.raises(WeightFormatError, match="head.bias"):
            load_weights(p)

    def test_missing_tensor(self, small_config, small_weights, tmp_path):
        from attnsi.vit import ViTWeights

        partial = ViTWeights(
            {
                k: v
                for k, v in small_weights.tensors.items()
                if k != "cls_token"
            }
        )
        p = tmp_path / "partial.vitw"
        save_weights(partial, p)
        with pytest.raises(WeightFormatError, match="cls_token"):
            load_weights(p, small_config)

    def test_shape_mismatch(self, saved):
        other = ViTConfig.from_arch("small", image_side=8, patch_size=1)
        with pytest.raises(WeightFormatError):
            load_weights(saved, other)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short.vitw"
        p.write_bytes(b"VITW\x01")
        with pytest.raises(WeightFormatError):
            load_weights(p)
