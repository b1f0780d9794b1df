import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncdiff.schedule import NoiseSchedule, build_linear, build_schedule, build_uniform, subsample


def test_linear_T4_closed_form():
    s = build_linear(4)
    # alpha_t = 2t / (T(T+1)) = t/10
    np.testing.assert_allclose(s.alpha, [0.1, 0.2, 0.3, 0.4], atol=1e-15)
    np.testing.assert_allclose(s.alpha_bar, [0.0, 0.1, 0.3, 0.6, 1.0], atol=1e-15)


def test_linear_T1_is_single_full_step():
    s = build_linear(1)
    assert s.alpha_bar.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("T", [1, 2, 4, 10, 1000, 4096])
def test_endpoint_and_monotone(T):
    for s in (build_linear(T), build_uniform(T)):
        assert abs(s.alpha_bar[-1] - 1.0) <= 1e-12
        assert s.alpha_bar[0] == 0.0
        assert np.all(np.diff(s.alpha_bar) > 0)


def test_uniform_is_linear_in_t():
    s = build_uniform(8)
    np.testing.assert_allclose(s.alpha_bar, np.arange(9) / 8, atol=1e-15)


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_bad_T(bad):
    with pytest.raises(ValueError):
        build_linear(bad)


def test_unknown_kind():
    with pytest.raises(ValueError):
        build_schedule("cosine", 10)


def test_descriptor_round_trip():
    s = build_linear(37)
    r = NoiseSchedule.from_descriptor(s.descriptor())
    assert r.kind == "linear" and r.T == 37
    assert np.array_equal(r.alpha_bar, s.alpha_bar)


def test_cumulative_bounds():
    s = build_linear(10)
    with pytest.raises(ValueError):
        s.cumulative(11)
    with pytest.raises(ValueError):
        s.step_alpha(0)


def test_subsample_examples():
    s = build_linear(1000)
    assert subsample(s, 1).indices == (1000,)
    assert subsample(s, 1).pairs() == [(1000, 0)]
    assert subsample(s, 10).indices == (1000, 900, 800, 700, 600, 500, 400, 300, 200, 100)
    assert len(subsample(s, 1000)) == 1000
    assert subsample(s, 1000).pairs()[-1] == (1, 0)


@pytest.mark.parametrize("n", [0, 1001])
def test_subsample_range(n):
    with pytest.raises(ValueError):
        subsample(build_linear(1000), n)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 2000), data=st.data())
def test_subsample_strictly_decreasing(T, data):
    n = data.draw(st.integers(1, T))
    plan = subsample(build_linear(T), n)
    idx = list(plan.indices) + [0]
    assert idx[0] == T and len(plan) == n
    assert all(a > b for a, b in zip(idx, idx[1:]))


@pytest.mark.parametrize("builder", [build_linear, build_uniform])
@pytest.mark.parametrize("n", [1, 3, 10, 1000])
def test_plan_increments_telescope_to_one(builder, n):
    s = builder(1000)
    steps = [s.alpha_bar[t] - s.alpha_bar[tp] for t, tp in subsample(s, n).pairs()]
    assert abs(sum(steps) - 1.0) <= 1e-12
    assert all(d > 0 for d in steps)


def test_build_linear_is_reproducible():
    a, b = build_linear(37), build_linear(37)
    assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.alpha_bar, b.alpha_bar)
