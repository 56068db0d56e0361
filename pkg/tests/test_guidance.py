import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distill.guidance import GuidanceParams, ScorePair, cfg_combine, cfg_negative, rescale_cfg


def _pair(rng, shape=(3, 8, 8)):
    return ScorePair(rng.normal(size=shape), rng.normal(size=shape))


@pytest.mark.parametrize("omega", [0.0, 1.0, 7.5, 49.0, 99.0])
def test_negative_matches_classic(rng, omega):
    for _ in range(50):
        pair = _pair(rng)
        np.testing.assert_allclose(cfg_negative(pair, 1 + omega), cfg_combine(pair, omega), atol=1e-12, rtol=0)


def test_collapse_identities(rng):
    pair = _pair(rng)
    assert np.array_equal(cfg_combine(pair, 0.0), pair.primary)
    assert np.array_equal(cfg_negative(pair, 1.0), pair.primary)
    assert np.array_equal(cfg_negative(pair, 0.0), pair.reference)


def test_classic_hand_values():
    pair = ScorePair(np.array([[[2.0]]]), np.array([[[1.0]]]))
    assert cfg_combine(pair, 3.0).item() == 5.0
    assert cfg_negative(pair, 4.0).item() == 5.0


def test_equal_predictions_fixed(rng):
    x = rng.normal(size=(3, 4, 4))
    pair = ScorePair(x, x.copy())
    np.testing.assert_allclose(cfg_negative(pair, 73.0), x, atol=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ScorePair(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


@pytest.mark.parametrize("kwargs", [
    {"weight": -1.0}, {"weight": float("nan")}, {"rescale_phi": 1.5}, {"mode": "bogus"}, {"rescale_axes": "row"},
])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        GuidanceParams(**kwargs)


class TestRescale:
    def test_phi_one_matches_std(self, rng):
        pos = rng.normal(size=(3, 8, 8))
        cfg = 7.0 * rng.normal(size=(3, 8, 8)) + 2.0
        out = rescale_cfg(pos, cfg, 1.0)
        np.testing.assert_allclose(out.std(axis=(1, 2)), pos.std(axis=(1, 2)), rtol=1e-9, atol=0)

    def test_phi_zero_bitwise(self, rng):
        pos, cfg = rng.normal(size=(2, 3, 8, 8))
        out = rescale_cfg(pos, cfg, 0.0)
        assert np.array_equal(out, cfg)
        assert out is not cfg

    def test_blend(self, rng):
        pos, cfg = rng.normal(size=(2, 3, 8, 8))
        full = rescale_cfg(pos, cfg, 1.0)
        np.testing.assert_allclose(rescale_cfg(pos, cfg, 0.3), 0.3 * full + 0.7 * cfg, atol=1e-12)

    def test_degenerate_channel_unrescaled(self, rng, caplog):
        pos = rng.normal(size=(3, 8, 8))
        cfg = rng.normal(size=(3, 8, 8))
        cfg[1] = 4.2
        with caplog.at_level(logging.WARNING, logger="distill.guidance"):
            out = rescale_cfg(pos, cfg, 1.0)
        np.testing.assert_array_equal(out[1], cfg[1])
        np.testing.assert_allclose(out[[0, 2]].std(axis=(1, 2)), pos[[0, 2]].std(axis=(1, 2)), rtol=1e-9)
        assert "degenerate" in caplog.text

    def test_global_axes(self, rng):
        pos = rng.normal(size=(3, 8, 8))
        cfg = 5.0 * rng.normal(size=(3, 8, 8))
        out = rescale_cfg(pos, cfg, 1.0, axes="global")
        np.testing.assert_allclose(out.std(), pos.std(), rtol=1e-9)

    def test_batched(self, rng):
        pos = rng.normal(size=(4, 3, 8, 8))
        cfg = 3.0 * rng.normal(size=(4, 3, 8, 8))
        out = rescale_cfg(pos, cfg, 1.0)
        for i in range(4):
            np.testing.assert_allclose(out[i], rescale_cfg(pos[i], cfg[i], 1.0), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rescale_cfg(np.zeros((3, 4, 4)), np.zeros((3, 4, 2)), 0.5)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (2, 4, 4), elements=st.floats(-10, 10)),
        arrays(np.float64, (2, 4, 4), elements=st.floats(-10, 10)),
        st.floats(0, 1),
    )
    def test_finite_and_std_bounded(self, pos, cfg, phi):
        out = rescale_cfg(pos, cfg, phi)
        assert np.all(np.isfinite(out))
        # std of the blend lies between the two endpoint stds (per channel)
        s_out = out.std(axis=(1, 2))
        s_cfg = cfg.std(axis=(1, 2))
        s_pos = np.where(s_cfg < 1e-12, s_cfg, pos.std(axis=(1, 2)))
        lo, hi = np.minimum(s_pos, s_cfg), np.maximum(s_pos, s_cfg)
        assert np.all(s_out >= lo - 1e-9) and np.all(s_out <= hi + 1e-9)


def test_negative_hand_example():
    pair = ScorePair(np.array([2.0, 2.0]), np.array([0.0, 4.0]))
    np.testing.assert_array_equal(cfg_negative(pair, 50.0), [100.0, -96.0])


def test_negative_affine_in_w(rng):
    pair = _pair(rng)
    for w1, w2 in [(0.0, 100.0), (3.5, 49.0), (10.0, 11.0)]:
        np.testing.assert_allclose(
            cfg_negative(pair, w1) + cfg_negative(pair, w2), 2 * cfg_negative(pair, (w1 + w2) / 2), atol=1e-9)


def test_rescale_equal_std_unchanged(rng):
    cfg = rng.normal(size=(3, 8, 8))
    pos = -cfg + 1.0
    np.testing.assert_allclose(rescale_cfg(pos, cfg, 0.7), cfg, atol=1e-12)


def test_rescale_halves():
    base = np.random.default_rng(3).normal(size=(1, 8, 8))
    pos = base / base.std()
    cfg = 2.0 * pos + 0.25
    out = rescale_cfg(pos, cfg, 1.0)
    np.testing.assert_allclose(out, cfg / 2, atol=1e-12)
    np.testing.assert_allclose(out.std(), 1.0, rtol=1e-9)
