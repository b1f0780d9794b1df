import pytest
import torch

from ncdiff import checkpoint
from ncdiff.aff import AFFConfig
from ncdiff.codec import CodecConfig, FactorizedCodec
from ncdiff.schedule import build_uniform
from ncdiff.unet import NoisePredictor, PredictorConfig


def test_codec_round_trip(tmp_path, tiny_codec):
    p = tmp_path / "c.pt"
    checkpoint.save_codec(p, tiny_codec, {"step": 3}, {"seed": 1})
    c, data = checkpoint.load_codec_full(p)
    assert c.config == tiny_codec.config
    assert all(torch.equal(a, b) for a, b in zip(c.state_dict().values(), tiny_codec.state_dict().values()))
    assert data["train_state"]["step"] == 3


def test_diffusion_round_trip_keeps_schedule(tmp_path):
    torch.manual_seed(0)
    cfg = PredictorConfig(base_channels=8, time_embed_dim=32, aff=AFFConfig(r_th=(0.6, 0.5, 0.4, 0.3)))
    m = NoisePredictor(cfg)
    p = tmp_path / "d.pt"
    checkpoint.save_diffusion(p, m, build_uniform(40), codec_id="c")
    b = checkpoint.load_diffusion(p)
    assert b.schedule.kind == "uniform" and b.schedule.T == 40
    assert b.predictor.config.aff.r_th == (0.6, 0.5, 0.4, 0.3)
    x = torch.randn(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(b(x, 4, x), m.eval()(x, 4, x))


def test_kind_mismatch(tmp_path, tiny_codec):
    p = tmp_path / "c.pt"
    checkpoint.save_codec(p, tiny_codec)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_diffusion(p)


def test_cache_dir_lookup(tmp_path, monkeypatch, tiny_codec):
    cache = tmp_path / "cache"
    cache.mkdir()
    checkpoint.save_codec(cache / "c.pt", tiny_codec)
    monkeypatch.setenv("NCD_CACHE_DIR", str(cache))
    assert checkpoint.resolve("somewhere/else/c.pt") == cache / "c.pt"
    with pytest.raises(FileNotFoundError):
        checkpoint.resolve("missing.pt")
