import numpy as np
import pytest
import torch

from icanim.blobio import MAGIC, read_blob, write_blob
from icanim.codec import CodecConfig, VideoCodec, downsample_mask, psnr, train_codec
from icanim.composer import build_masks
from icanim.errors import CheckpointError, ShapeError


def test_latent_shape_arithmetic():
    cfg = CodecConfig(spatial_stride=8, temporal_stride=4, latent_channels=4)
    codec = VideoCodec(cfg)
    lat = codec.encode(np.zeros((49, 64, 128, 3), np.float32))
    assert lat.shape == (13, 8, 16, 4)
    assert codec.encode(np.zeros((1, 16, 16, 3), np.float32)).shape[0] == 1


def test_indivisible_shape_lists_valid_sizes():
    codec = VideoCodec(CodecConfig())
    with pytest.raises(ShapeError, match=r"T=6.*\[5, 9\]"):
        codec.encode(np.zeros((6, 16, 16, 3), np.float32))
    with pytest.raises(ShapeError, match=r"H=20.*\[16, 24\]"):
        codec.encode(np.zeros((5, 20, 16, 3), np.float32))


@pytest.mark.parametrize("kind", ["conv", "patchify"])
def test_decode_inverts_encode_shape(kind):
    codec = VideoCodec(CodecConfig(spatial_stride=8, temporal_stride=4, kind=kind))
    for T in (1, 5, 9, 13, 49):
        for H in (16, 32, 64):
            for W in (16, 48, 64):
                v = np.zeros((T, H, W, 3), np.float32)
                assert codec.decode(codec.encode(v)).shape == v.shape


def test_patchify_codec_is_lossless_and_deterministic():
    codec = VideoCodec(CodecConfig(spatial_stride=4, temporal_stride=4, kind="patchify"))
    v = np.random.default_rng(0).random((9, 16, 32, 3)).astype(np.float32)
    a = codec.encode(v)
    assert torch.equal(a.data, codec.encode(v).data)
    np.testing.assert_allclose(codec.decode(a), v, atol=1e-6)


def test_zero_latent_decodes():
    codec = VideoCodec(CodecConfig(latent_channels=4))
    out = codec.decode(torch.zeros(4, 2, 2, 2))
    assert out.shape == (5, 16, 16, 3)
    assert np.all((out >= 0) & (out <= 1))
    with pytest.raises(ShapeError):
        codec.decode(torch.zeros(3, 2, 2, 2))


def test_trained_codec_constant_clip_psnr():
    rng = np.random.default_rng(0)
    vids = [np.broadcast_to(rng.random(3), (5, 16, 16, 3)).astype(np.float32) for _ in range(32)]
    codec, hist = train_codec(vids, CodecConfig(spatial_stride=4, temporal_stride=4,
                                                latent_channels=4, hidden=32),
                              epochs=40, lr=1e-2, batch_size=8)
    # smoothed non-increase: mean of the last quarter below the first quarter
    q = len(hist) // 4
    assert np.mean(hist[-q:]) < np.mean(hist[:q])
    test = np.broadcast_to(np.array([0.3, 0.6, 0.2]), (5, 16, 16, 3)).astype(np.float32)
    assert psnr(codec.decode(codec.encode(test)), test) > 25


def test_mask_downsample_enumeration():
    cfg = CodecConfig(spatial_stride=4, temporal_stride=4)
    m = downsample_mask(build_masks(5, 8, 8), cfg)
    assert m.shape == (1, 2, 2, 4)
    # latent frame 0 pools pixel frame {0}; frame 1 pools {1..4}
    assert m[0, 0].tolist() == [[1, 1, 1, 1]] * 2
    assert m[0, 1].tolist() == [[0, 0, 1, 1]] * 2
    ones = downsample_mask(np.ones((9, 8, 16, 1), np.float32), cfg)
    assert ones.min() == 1
    assert set(torch.unique(m).tolist()) <= {0.0, 1.0}


def test_mask_midline_has_no_bleed():
    cfg = CodecConfig(spatial_stride=8, temporal_stride=4)
    for T, H, W in [(5, 16, 16), (9, 32, 24), (13, 8, 40)]:
        m = downsample_mask(build_masks(T, H, W), cfg)[0]
        half = m.shape[-1] // 2
        assert torch.all(m[1:, :, :half] == 0) and torch.all(m[:, :, half:] == 1)
        assert torch.all(m[0] == 1)


def test_codec_save_load(tmp_path):
    torch.manual_seed(3)
    codec = VideoCodec(CodecConfig(latent_channels=4, hidden=8))
    codec.latent_scale.fill_(2.5)
    codec.save(tmp_path / "c.bin")
    back = VideoCodec.load(tmp_path / "c.bin")
    v = np.random.default_rng(0).random((5, 16, 16, 3)).astype(np.float32)
    assert torch.equal(codec.encode(v).data, back.encode(v).data)
    assert (tmp_path / "c.bin").read_bytes()[:8] == MAGIC


def test_blob_layout_and_corruption(tmp_path):
    p = tmp_path / "b.bin"
    t = {"a": torch.arange(6, dtype=torch.float32).reshape(2, 3), "b": torch.tensor([7], dtype=torch.int64)}
    write_blob(p, {"kind": "x"}, t)
    head, back = read_blob(p)
    assert head["kind"] == "x" and [m["name"] for m in head["tensors"]] == ["a", "b"]
    assert torch.equal(back["a"], t["a"]) and torch.equal(back["b"], t["b"])
    raw = p.read_bytes()
    p.write_bytes(raw[:-2])
    with pytest.raises(CheckpointError, match="truncated"):
        read_blob(p)
    p.write_bytes(raw + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        read_blob(p)
    p.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_blob(p)
