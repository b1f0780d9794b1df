import pytest
import torch

from ncdiff.codec import CodecConfig, FactorizedCodec
from ncdiff.unet import NoisePredictor, PredictorConfig

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_codec():
    torch.manual_seed(0)
    return FactorizedCodec(CodecConfig(hidden_channels=8, latent_channels=8)).eval()


@pytest.fixture
def tiny_predictor():
    torch.manual_seed(0)
    return NoisePredictor(PredictorConfig(base_channels=8, time_embed_dim=32)).eval()


def rand_image(*shape, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=g, dtype=dtype)
