from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from actionscaling.action_core import (
    BIN_WIDTH,
    NormalizationStats,
    denormalize,
    detokenize,
    is_valid_action,
    make_action,
    normalize,
    rmse,
    tokenize,
)

unit = st.floats(-1.0, 1.0, allow_nan=False)
cont6 = arrays(np.float64, 6, elements=unit)
grip = st.sampled_from([0.0, 1.0])


@st.composite
def actions(draw):
    return np.append(draw(cont6), draw(grip))


STATS = NormalizationStats((-0.05,) * 6, (0.05,) * 6)


def test_normalize_midpoint_boundary_clamp():
    raw = np.array([0.0, 0.05, 0.1, -0.05, -0.2, 0.025, 1.0])
    out = normalize(raw, STATS)
    np.testing.assert_allclose(out, [0.0, 1.0, 1.0, -1.0, -1.0, 0.5, 1.0], atol=1e-15)


def test_normalize_leaves_gripper_and_input_untouched():
    raw = np.array([0.01] * 6 + [0.0])
    before = raw.copy()
    out = normalize(raw, STATS)
    assert out[6] == 0.0
    np.testing.assert_array_equal(raw, before)


@given(cont6)
def test_denormalize_inverts_normalize_inside_bounds(x):
    a = np.append(x, 1.0)
    np.testing.assert_allclose(normalize(denormalize(a, STATS), STATS), a, atol=1e-12)


@given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.integers(0, 5))
def test_normalize_monotone_per_dim(u, v, dim):
    lo, hi = sorted((u, v))
    a = np.zeros(7)
    b = np.zeros(7)
    a[dim], b[dim] = lo, hi
    assert normalize(a, STATS)[dim] <= normalize(b, STATS)[dim]


def test_stats_require_low_below_high():
    with pytest.raises(ValueError, match="low < high"):
        NormalizationStats((0.0,) * 6, (0.0,) + (1.0,) * 5)


def test_stats_json_round_trip(tmp_path):
    s = NormalizationStats(tuple(np.linspace(-1, -0.5, 6)), tuple(np.linspace(0.1, 0.7, 6)))
    s.save(tmp_path / "stats.json")
    assert NormalizationStats.load(tmp_path / "stats.json") == s
    assert set(s.to_dict()) == {"low", "high"}


def test_stats_from_actions_uses_percentiles():
    raw = np.zeros((101, 7))
    raw[:, 0] = np.arange(101)
    s = NormalizationStats.from_actions(raw)
    assert s.low[0] == pytest.approx(1.0)
    assert s.high[0] == pytest.approx(99.0)
    # flat dims are widened rather than rejected
    assert s.low[1] < 0.0 < s.high[1]


def test_make_action_and_validity():
    a = make_action([0.1] * 6, 1)
    assert a.shape == (7,) and is_valid_action(a)
    assert not is_valid_action(np.append([1.5] * 6, 0.0))
    assert is_valid_action(np.append([1.5] * 6, 0.0), normalized=False)
    assert not is_valid_action(np.append([0.0] * 6, 0.5))
    with pytest.raises(ValueError):
        make_action([0.0] * 6, 2)


def test_rmse_hand_values():
    zero = np.zeros(7)
    one_grip = zero.copy()
    one_grip[6] = 1.0
    assert rmse(zero, one_grip) == pytest.approx(0.3779644730092272, abs=1e-15)
    a = zero.copy()
    a[0] = 1.0
    b = zero.copy()
    b[0] = -1.0
    assert rmse(a, b) == pytest.approx(0.7559289460184544, abs=1e-15)


def test_rmse_broadcasts_over_rows():
    cands = np.zeros((3, 7))
    cands[1, 6] = 1.0
    out = rmse(cands, np.zeros(7))
    assert out.shape == (3,)
    assert out[1] == pytest.approx(math.sqrt(1 / 7))


@given(actions(), actions(), actions())
def test_rmse_metric_properties(a, b, c):
    assert rmse(a, b) == rmse(b, a)
    assert rmse(a, b) >= 0.0
    assert rmse(a, a) == 0.0
    if not np.array_equal(a, b):
        assert rmse(a, b) > 0.0
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12


def test_token_boundaries():
    a = np.array([-1.0, np.nextafter(1.0, 0.0), 1.0, 0.0, -BIN_WIDTH / 2, 0.3, 1.0])
    t = tokenize(a)
    assert t[0] == 0 and t[1] == 255 and t[2] == 255
    assert t[3] == 128 and t[4] == 127
    assert t[6] == 255
    assert tokenize(np.zeros(7))[6] == 0
    assert abs(detokenize(t)[5] - 0.3) <= 1 / 256


def test_tokenize_detokenize_identity_on_all_tokens():
    t = np.zeros((256, 7), dtype=np.int64)
    t[:, :6] = np.arange(256)[:, None]
    t[::2, 6] = 255
    np.testing.assert_array_equal(tokenize(detokenize(t)), t)


def test_detokenize_rejects_out_of_range():
    with pytest.raises(ValueError):
        detokenize(np.full(7, 256))


@settings(max_examples=200)
@given(actions())
def test_detokenize_tokenize_error_bound(a):
    back = detokenize(tokenize(a))
    assert np.all(np.abs(back[:6] - a[:6]) <= 1 / 256 + 1e-15)
    assert back[6] == a[6]
