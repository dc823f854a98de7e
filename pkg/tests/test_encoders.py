import numpy as np
import pytest

from appformer.encoders import (
    TIME_CARDINALITIES,
    AdditiveTimeEncoder,
    AppEncoder,
    EncoderConfig,
    MultiModalEncoder,
    PoiEncoder,
    TimeEncoder,
    UserEncoder,
    time_indices,
)
from appformer.errors import ConfigError, ShapeError, VocabLookupError


def rng():
    return np.random.default_rng(0)


def test_app_encoder_is_a_table_lookup():
    enc = AppEncoder(5, 3, rng())
    out = enc(np.array([[4, 0], [4, 4]])).data
    table = enc.embedding.table.data
    np.testing.assert_array_equal(out[0, 0], table[4])
    np.testing.assert_array_equal(out[1, 1], table[4])
    with pytest.raises(VocabLookupError):
        enc(np.array([[5]]))


def test_user_encoder_repeats_over_positions():
    enc = UserEncoder(3, 2, rng())
    out = enc(np.array([2, 0]), m=4).data
    assert out.shape == (2, 4, 2)
    assert np.all(out[0] == enc.embedding.table.data[2])
    with pytest.raises(ShapeError):
        enc(np.array([[1]]), m=4)


def test_poi_encoder_applies_log1p_then_linear():
    counts = np.array([[0, 3], [7, 1]])
    enc = PoiEncoder(counts, 4, rng())
    w, b = enc.linear.weight.data, enc.linear.bias.data
    np.testing.assert_allclose(enc(np.array([[1]])).data[0, 0], np.log1p([7.0, 1.0]) @ w + b, atol=1e-15)
    with pytest.raises(ConfigError):
        PoiEncoder(np.array([[-1, 0]]), 4, rng())
    with pytest.raises(VocabLookupError):
        enc(np.array([[2]]))


def test_time_encoder_concatenates_units():
    enc = TimeEncoder(2, 3, rng())
    idx = np.array([[[3, 19, 2, 8, 59]]])
    parts = [enc.tables[j].table.data[idx[0, 0, j]] for j in range(5)]
    want = np.concatenate(parts) @ enc.linear.weight.data + enc.linear.bias.data
    np.testing.assert_allclose(enc(idx).data[0, 0], want, atol=1e-15)


def test_additive_time_encoder_sums_units():
    enc = AdditiveTimeEncoder(4, rng())
    idx = np.array([[[0, 1, 2, 3, 4]]])
    want = sum(enc.tables[j].table.data[idx[0, 0, j]] for j in range(5))
    np.testing.assert_allclose(enc(idx).data[0, 0], want, atol=1e-15)


def test_time_bounds_are_checked():
    enc = TimeEncoder(2, 3, rng())
    for j, n in enumerate(TIME_CARDINALITIES):
        idx = np.zeros((1, 1, 5), dtype=int)
        idx[..., j] = n
        with pytest.raises(VocabLookupError):
            enc(idx)
    with pytest.raises(ShapeError):
        enc(np.zeros((1, 1, 4), dtype=int))


def test_time_indices_are_zero_based():
    assert time_indices(12, 31, 6, 23, 59) == (11, 30, 6, 23, 59)


@pytest.mark.parametrize("mode,has_time", [("appformer", True), ("baseline_additive", True), ("none", False)])
def test_multimodal_shapes(mode, has_time):
    cfg = EncoderConfig(n_apps=6, n_users=3, d_app=5, d_user=2, d_time_unit=3, d_model=8)
    enc = MultiModalEncoder(cfg, np.ones((4, 17)), rng(), time_mode=mode)
    out = enc(np.zeros((2, 4), int), np.array([0, 2]), np.zeros((2, 4, 5), int), np.array([[0, 1, 2, 3]] * 2))
    assert out.a.shape == (2, 4, 5) and out.u.shape == (2, 4, 2) and out.l.shape == (2, 4, 8)
    assert (out.t is not None) == has_time
    if has_time:
        assert out.t.shape == (2, 4, 8)


def test_multimodal_rejects_unknown_mode():
    cfg = EncoderConfig(n_apps=2, n_users=1)
    with pytest.raises(ConfigError):
        MultiModalEncoder(cfg, np.ones((1, 17)), rng(), time_mode="rotary")
    with pytest.raises(ConfigError):
        EncoderConfig(n_apps=0, n_users=1)
