import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynrel.nn import DimensionError, grad_check
from dynrel.temporal import TimeEncoder, TimeNet, decay_weights, encode_series, time_score
from tests import oracles


def test_decay_examples():
    a = decay_weights(5, 2, 1.0)
    assert a.shape == (4,)
    assert a[3] == pytest.approx(0.25)
    assert a[0] == pytest.approx(1 / 7)


def test_decay_matches_closed_form():
    np.testing.assert_allclose(decay_weights(27, 4, 2.5), oracles.decay(27, 4, 2.5), rtol=1e-14)


def test_high_alpha_concentrates_on_last_column():
    a = decay_weights(10, 2, 20.0)
    assert a[-1] / a.sum() >= 0.9


def test_window_end_convention():
    a = decay_weights(5, 2, 1.0, convention="window_end")
    np.testing.assert_allclose(a, 1 / (np.array([3.0, 2.0, 1.0, 0.0]) + 1))


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_decay_rejects_nonpositive_alpha(alpha):
    with pytest.raises(ValueError):
        decay_weights(5, 2, alpha)


def test_decay_rejects_short_series():
    with pytest.raises(DimensionError):
        decay_weights(3, 4, 1.0)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(2, 40), w=st.integers(1, 6), alpha=st.floats(0.05, 10.0),
       convention=st.sampled_from(["standard", "window_end"]))
def test_decay_strictly_increasing(T, w, alpha, convention):
    if T < w:
        return
    a = decay_weights(T, w, alpha, convention)
    assert np.all(np.diff(a) > 0)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(3, 40), w=st.integers(1, 5), a1=st.floats(0.1, 8.0), a2=st.floats(0.1, 8.0))
def test_recency_concentration_grows_with_alpha(T, w, a1, a2):
    lo, hi = sorted((a1, a2))
    if T <= w:
        return
    share = lambda alpha: (lambda a: a[-1] / a.sum())(decay_weights(T, w, alpha))
    assert share(hi) >= share(lo) - 1e-12


# -- encoder -----------------------------------------------------------------------

def test_default_stack_final_length():
    # 27 - 5 + 1 = 23, then 23 - 4 + 1 = 20
    enc = TimeEncoder()
    assert enc.out_length == 20 and enc.out_filters == 25
    assert enc.attention.shape == (20,)
    np.testing.assert_allclose(enc.attention, decay_weights(23, 4, 2.0))


def test_short_series_rejected():
    with pytest.raises(DimensionError):
        TimeEncoder(length=7, windows=(5, 4))


def test_wrong_input_shape():
    with pytest.raises(DimensionError):
        TimeEncoder(length=10, windows=(3,), filters=(4,)).forward(np.zeros((2, 1, 9)))


@pytest.mark.parametrize("alpha", [0.5, 2.0, 40.0])
def test_embedding_width_independent_of_alpha(alpha):
    enc = TimeEncoder(length=12, filters=(3, 4), windows=(3, 2), alpha=alpha, dim=7)
    assert encode_series(enc, np.ones((1, 12))).shape == (7,)


def test_all_ones_attention_equals_no_attention_variant():
    rng = np.random.default_rng(0)
    att = TimeEncoder(length=15, filters=(4, 5), windows=(3, 3), dim=6, rng=np.random.default_rng(1))
    plain = TimeEncoder(length=15, filters=(4, 5), windows=(3, 3), dim=6, attention=False,
                        rng=np.random.default_rng(1))
    att.attention = np.ones_like(att.attention)
    x = rng.standard_normal((4, 1, 15))
    np.testing.assert_array_equal(att.forward(x), plain.forward(x))


def test_attention_scaling_is_columnwise_linear():
    rng = np.random.default_rng(2)
    enc = TimeEncoder(length=12, filters=(3,), windows=(4,), dim=5, rng=rng)
    x = rng.standard_normal((3, 1, 12))
    before = enc.feature_map(x)
    k, c = 4, 3.25
    enc.attention = enc.attention.copy()
    enc.attention[k] *= c
    after = enc.feature_map(x)
    np.testing.assert_allclose(after[:, :, k], c * before[:, :, k], rtol=1e-13)
    others = np.arange(before.shape[2]) != k
    np.testing.assert_array_equal(after[:, :, others], before[:, :, others])


def test_zero_input_gives_dense_head_at_zero():
    enc = TimeEncoder(length=10, filters=(3, 4), windows=(3, 2), dim=5, rng=np.random.default_rng(3))
    enc.dense.bias.value[...] = np.array([0.5, -0.2, 0.0, 1.0, -3.0])
    for bn in enc.batchnorms():
        bn.shift.value[...] = -1.0  # keeps the post-ReLU maps at zero in inference mode
    out = encode_series(enc, np.zeros((1, 10)))
    np.testing.assert_allclose(out, np.maximum(enc.dense.bias.value, 0.0))


def test_single_series_uses_inference_mode_and_restores():
    enc = TimeEncoder(length=10, filters=(3,), windows=(3,), dim=4)
    enc.train(True)
    encode_series(enc, np.ones((1, 10)))
    assert all(bn.training for bn in enc.batchnorms())


def test_encode_series_batch_of_one_matches_stack_in_eval():
    rng = np.random.default_rng(4)
    enc = TimeEncoder(length=12, filters=(3, 3), windows=(3, 3), dim=4, rng=rng)
    enc.forward(rng.standard_normal((8, 1, 12)))  # populate running statistics
    enc.train(False)
    x = rng.standard_normal((3, 1, 12))
    stacked = encode_series(enc, x)
    np.testing.assert_allclose(np.stack([encode_series(enc, s) for s in x]), stacked, atol=1e-14)


def test_encoder_gradcheck_through_attention():
    rng = np.random.default_rng(5)
    enc = TimeEncoder(channels=2, length=12, filters=(3, 4), windows=(3, 2), dim=5, rng=rng)
    for bn in enc.batchnorms():
        bn.scale.value[...] = rng.uniform(0.5, 1.5, bn.scale.shape)
        bn.shift.value[...] = rng.uniform(0.1, 0.5, bn.shift.shape)
    x = rng.standard_normal((4, 2, 12))
    report = grad_check(lambda: enc.forward(x), enc.backward, enc.parameters(), [x], ["series"])
    assert report.passed(1e-4), report.table()


# -- triple scorer ---------------------------------------------------------------

def make_net(seed=6):
    rng = np.random.default_rng(seed)
    enc = TimeEncoder(length=10, filters=(3,), windows=(3,), dim=4, rng=rng)
    return TimeNet(enc, hidden=(6,), rng=rng), rng


def test_time_score_swap():
    net, rng = make_net()
    xs, xp, xn = rng.standard_normal((3, 1, 10))
    assert time_score(net, xs, xp, xp) == time_score(net, xs, xp.copy(), xp.copy())
    assert time_score(net, xs, xp, xn) != pytest.approx(time_score(net, xs, xn, xp), abs=1e-12)


def test_time_net_gradcheck():
    net, rng = make_net(7)
    series = rng.standard_normal((12, 1, 10))
    report = grad_check(lambda: net.forward(series), net.backward, net.parameters(),
                        [series], ["series"])
    assert report.passed(1e-4), report.table()
