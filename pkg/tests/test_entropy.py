import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncdiff.codec import Bitstream, DecodeError, EntropyModel, FormatError, bpp_from_bytes, read_bitstream, write_bitstream
from ncdiff.codec.entropy import quantize_pmf
from ncdiff.codec.rangecoder import RangeDecoder, RangeEncoder


def test_quantize_pmf_sums_and_floor():
    f = quantize_pmf(np.array([1e-12, 0.5, 0.5 - 1e-12]), 16)
    assert f.sum() == 1 << 16 and f.min() >= 1


def test_quantize_pmf_exact_dyadic():
    f = quantize_pmf(np.array([0.5, 0.25, 0.125, 0.125]), 16)
    assert f.tolist() == [32768, 16384, 8192, 8192]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=300).filter(lambda v: sum(v) > 0))
def test_quantize_pmf_property(p):
    f = quantize_pmf(np.array(p), 16)
    assert f.sum() == 65536 and f.min() >= 1


def test_range_coder_raw_round_trip():
    rng = np.random.default_rng(0)
    freqs = quantize_pmf(rng.random(20) ** 4, 16)
    cdf = [0] + np.cumsum(freqs).tolist()
    symbols = rng.integers(0, 20, 5000)
    enc = RangeEncoder(16)
    for s in symbols:
        enc.encode(cdf[s], freqs[s])
    dec = RangeDecoder(enc.finish(), 16)
    assert [dec.decode(cdf) for _ in symbols] == symbols.tolist()


def test_carry_heavy_stream():
    # one dominant symbol drives low towards 0xFF.. runs
    freqs = [65535, 1]
    cdf = [0, 65535, 65536]
    seq = [0] * 3000 + [1] + [0] * 3000 + [1, 1]
    enc = RangeEncoder(16)
    for s in seq:
        enc.encode(cdf[s], freqs[s])
    dec = RangeDecoder(enc.finish(), 16)
    assert [dec.decode(cdf) for _ in seq] == seq


def test_zero_frequency_rejected():
    with pytest.raises(ValueError):
        RangeEncoder().encode(0, 0)


def _model(rng, channels, support=8):
    return EntropyModel.from_pmf(rng.random((channels, 2 * support + 1)) ** 3, support)


def test_entropy_model_round_trip_and_estimate():
    rng = np.random.default_rng(1)
    m = _model(rng, 4)
    probs = m.probabilities()
    q = np.stack([rng.choice(17, size=(16, 16), p=probs[c]) for c in range(4)])[None] - 8
    payload = m.encode(q)
    assert np.array_equal(m.decode(payload, q.shape), q)
    est = m.estimate_bits(q)
    assert abs(8 * len(payload) - est) <= 0.02 * est + 64 * 8


def test_symbol_outside_support():
    m = EntropyModel.uniform(1, 4)
    with pytest.raises(ValueError):
        m.encode(np.full((1, 1, 1, 1), 5))


def test_cdf_monotone():
    m = _model(np.random.default_rng(2), 3)
    c = m.cdf()
    assert c.shape == (3, 18)
    assert np.all(np.diff(c, axis=1) > 0) and np.allclose(c[:, -1], 1)


def test_truncated_payload_raises():
    m = EntropyModel.uniform(2, 8)
    q = np.random.default_rng(3).integers(-8, 9, (1, 2, 8, 8))
    payload = m.encode(q)
    with pytest.raises(DecodeError):
        m.decode(payload[: len(payload) // 2], q.shape)


def test_bpp_arithmetic():
    assert bpp_from_bytes(1000, 512, 768) == pytest.approx(0.020345, abs=5e-6)


def test_bitstream_round_trip(tmp_path):
    bs = Bitstream(480, 640, 192, 30, 40, b"\x00\x01\x02xyz")
    path = tmp_path / "a.ncdf"
    write_bitstream(path, bs)
    assert read_bitstream(path) == bs
    assert path.stat().st_size == len(bs)
    assert bs.bpp() == pytest.approx(8 * len(bs) / (480 * 640))


def test_bitstream_errors():
    raw = Bitstream(16, 16, 8, 1, 1, b"abcdef").to_bytes()
    with pytest.raises(FormatError):
        Bitstream.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        Bitstream.from_bytes(raw[:10])
    with pytest.raises(DecodeError):
        Bitstream.from_bytes(raw[:-2])
    with pytest.raises(FormatError):
        Bitstream.from_bytes(raw + b"!")
