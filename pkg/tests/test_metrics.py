import math

import numpy as np
import pytest
import torch

from ncdiff.metrics import RDCurve, RDPoint, bd_rate, ms_ssim, psnr


def test_psnr_examples():
    a = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
    assert psnr(a, a) == 100.0
    assert psnr(a, torch.ones_like(a)) == pytest.approx(0.0)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 9))


def test_ms_ssim_identity_symmetry_noise():
    g = torch.Generator().manual_seed(0)
    a = torch.rand(1, 3, 192, 192, generator=g)
    b = torch.rand(1, 3, 192, 192, generator=g)
    assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ms_ssim(a, b) == pytest.approx(ms_ssim(b, a), abs=1e-12)
    assert ms_ssim(a, b) < 0.2


def test_ms_ssim_small_input_falls_back():
    a = torch.rand(1, 3, 40, 40)
    assert ms_ssim(a, a) == pytest.approx(1.0)
    assert 0 <= ms_ssim(a, (a + 0.1 * torch.randn_like(a)).clamp(0, 1)) < 1


def _curve(rates, q, cid="c"):
    return RDCurve([RDPoint(r, p, 0.9, None, str(i)) for i, (r, p) in enumerate(zip(rates, q))], cid)


RATES = [0.1, 0.2, 0.4, 0.8, 1.2]
PSNRS = [27.0, 29.5, 32.0, 34.0, 35.1]


def test_bd_rate_identical():
    c = _curve(RATES, PSNRS)
    assert bd_rate(c, c) == 0.0


def test_bd_rate_doubled():
    assert bd_rate(_curve(RATES, PSNRS), _curve([2 * r for r in RATES], PSNRS)) == pytest.approx(100.0, abs=1e-9)


def test_bd_rate_antisymmetry():
    a = _curve(RATES, PSNRS)
    b = _curve([0.12, 0.21, 0.37, 0.71, 1.0], [27.3, 29.6, 31.8, 33.9, 34.8])
    ab, ba = bd_rate(a, b), bd_rate(b, a)
    assert ab == pytest.approx(-ba / (1 + ba / 100), abs=0.5)


def test_bd_rate_lower_is_better_metric():
    pts_a = [RDPoint(r, 30, 0.9, d) for r, d in zip(RATES, [0.5, 0.4, 0.3, 0.2, 0.1])]
    pts_b = [RDPoint(2 * r, 30, 0.9, d) for r, d in zip(RATES, [0.5, 0.4, 0.3, 0.2, 0.1])]
    assert bd_rate(RDCurve(pts_a), RDCurve(pts_b), "perceptual") == pytest.approx(100.0)


def test_bd_rate_errors():
    a = _curve(RATES, PSNRS)
    with pytest.raises(ValueError):
        bd_rate(a, _curve(RATES, [p + 20 for p in PSNRS]))
    with pytest.raises(ValueError):
        bd_rate(_curve(RATES[:3], PSNRS[:3]), a)


def test_rd_types_validation():
    with pytest.raises(ValueError):
        RDPoint(0.0, 30)
    with pytest.raises(ValueError):
        _curve([0.1, 0.1], [30, 31])
    with pytest.raises(ValueError):
        _curve([0.1], [30])
    c = _curve([0.4, 0.1, 0.2], [32, 27, 29])
    assert np.array_equal(c.rates(), [0.1, 0.2, 0.4])
