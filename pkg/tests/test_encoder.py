import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convact import autodiff as ad
from convact.autodiff import Tensor
from convact.encoder import (
    BiLstmParams,
    EncoderConfig,
    HierEncoder,
    LstmCellParams,
    encode_conversation,
    encode_sentence,
    encode_sentences,
    lstm_cell_step,
    lstm_layer,
)


def reference_layer(x, params, reverse=False):
    """Step-by-step unroll of one sequence with the primitive cell."""
    H = params.hidden_size
    h = c = np.zeros(H)
    seq = x[::-1] if reverse else x
    outs = []
    for row in seq:
        h, c = lstm_cell_step(params, row, (h, c))
        h, c = h.data, c.data
        outs.append(h)
    outs = np.array(outs)
    return outs[::-1] if reverse else outs


def test_cell_zero_params_zero_output():
    p = LstmCellParams(Tensor(np.zeros((8, 3))), Tensor(np.zeros((8, 2))), Tensor(np.zeros(8)))
    h, c = lstm_cell_step(p, np.zeros(3), (np.zeros(2), np.zeros(2)))
    assert h.data.tolist() == [0.0, 0.0] and c.data.tolist() == [0.0, 0.0]


def test_cell_carry_case():
    H = 3
    p = LstmCellParams.init(4, H, 0, "t")
    p.b.data[:H] = -60.0  # input gate shut
    p.b.data[H : 2 * H] = 60.0  # forget gate open
    p.w_ih.data[: 2 * H] = 0.0
    p.w_hh.data[: 2 * H] = 0.0
    c = np.array([0.3, -1.2, 2.0])
    _, c_new = lstm_cell_step(p, np.ones(4), (np.zeros(H), c))
    np.testing.assert_allclose(c_new.data, c, atol=1e-20)


def test_forget_bias_initialized_to_one():
    p = LstmCellParams.init(5, 4, 3, "t")
    assert p.b.data[4:8].tolist() == [1.0] * 4
    assert not p.b.data[:4].any() and not p.b.data[8:].any()


@pytest.mark.parametrize("seed", range(5))
def test_cell_unroll_gradient(seed):
    rng = np.random.default_rng(seed)
    p = LstmCellParams.init(3, 2, seed, "t")
    xs = Tensor(rng.normal(size=(3, 3)))

    def f():
        h = c = np.zeros(2)
        for t in range(3):
            h, c = lstm_cell_step(p, xs[t], (h, c))
        return ad.sum(h * np.array([1.0, -2.0]))

    assert ad.finite_diff_check(f, [xs, p.w_ih, p.w_hh, p.b]) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(0, 1000), st.booleans())
def test_fused_layer_matches_per_sequence_unroll(lengths, seed, reverse):
    rng = np.random.default_rng(seed)
    p = LstmCellParams.init(3, 2, seed, "t")
    x = rng.normal(size=(sum(lengths), 3))
    fused = lstm_layer(x, lengths, p, reverse=reverse).data
    start = 0
    for n in lengths:
        ref = reference_layer(x[start : start + n], p, reverse)
        np.testing.assert_allclose(fused[start : start + n], ref, rtol=0, atol=1e-14)
        start += n


def test_single_token_sentence_reads_both_directions_at_that_token():
    layer = BiLstmParams.init(3, 2, 0, "w")
    x = np.random.default_rng(0).normal(size=(1, 3))
    h = encode_sentence(x, [layer]).data
    fwd = reference_layer(x, layer.fwd)[0]
    bwd = reference_layer(x, layer.bwd, reverse=True)[0]
    np.testing.assert_allclose(h, np.concatenate([fwd, bwd]), atol=1e-15)


def test_palindrome_with_tied_directions_gives_equal_halves():
    layer = BiLstmParams.init(3, 2, 1, "w")
    layer.bwd = LstmCellParams(*(Tensor(t.data.copy()) for t in layer.fwd.tensors().values()))
    a, b, c = np.random.default_rng(2).normal(size=(3, 3))
    x = np.stack([a, b, c, b, a])
    h = encode_sentence(x, [layer]).data
    np.testing.assert_allclose(h[:2], h[2:], atol=1e-15)


def test_empty_sentence_rejected():
    layer = BiLstmParams.init(3, 2, 0, "w")
    with pytest.raises(ValueError):
        encode_sentence(np.zeros((0, 3)), [layer])
    with pytest.raises(ValueError):
        encode_sentences(np.zeros((2, 3)), [2, 0], [layer])


@pytest.mark.parametrize("seed", range(5))
def test_sentence_encoder_gradient(seed):
    rng = np.random.default_rng(seed)
    layer = BiLstmParams.init(3, 2, seed, "w")
    x = Tensor(rng.normal(size=(4, 3)))
    w = rng.normal(size=4)
    ts = [x, *layer.tensors().values()]
    assert ad.finite_diff_check(lambda: ad.sum(encode_sentence(x, [layer]) * w), ts) < 1e-4


def _encoder(variant, seed=0, dim=4, hw=3, hc=3, depth=2):
    cfg = EncoderConfig(word_hidden=hw, conv_hidden=hc, variant=variant, depth=depth, dropout_rate=0.5)
    return HierEncoder.init(dim, cfg, seed)


def test_output_dimensions():
    words = np.random.default_rng(0).normal(size=(7, 4))
    lengths = [3, 1, 3]
    assert _encoder("H-LSTM", hw=3, hc=5).encode(words, lengths).shape == (3, 10)
    assert _encoder("B-LSTM", hw=3).encode(words, lengths).shape == (3, 6)
    s = _encoder("S-LSTM", hw=3, depth=3)
    assert len(s.word_layers) == 3
    assert s.encode(words, lengths).shape == (3, 6)


def test_blstm_conversation_is_identity():
    H = np.random.default_rng(1).normal(size=(4, 6))
    cfg = EncoderConfig(word_hidden=3, variant="B-LSTM")
    np.testing.assert_array_equal(encode_conversation(H, cfg, None).data, H)


def test_single_sentence_hlstm_depends_only_on_it():
    enc = _encoder("H-LSTM")
    rng = np.random.default_rng(3)
    words = rng.normal(size=(5, 4))
    alone = enc.encode(words[:2], [2]).data
    other = rng.normal(size=(5, 4))
    other[:2] = words[:2]
    again = enc.encode(other[:2], [2]).data
    np.testing.assert_array_equal(alone, again)


def test_sentence_order_matters_for_hlstm():
    rng = np.random.default_rng(4)
    enc = _encoder("H-LSTM")
    # random search for a witness: reversing three sentences changes u for the same sentence
    for _ in range(20):
        words = rng.normal(size=(6, 4))
        u = enc.encode(words, [2, 2, 2]).data
        rev = np.concatenate([words[4:6], words[2:4], words[0:2]])
        u_rev = enc.encode(rev, [2, 2, 2]).data
        if not np.allclose(u[0], u_rev[2], atol=1e-6):
            return
    pytest.fail("conversation layer looked order-invariant on every random instance")


def test_eval_mode_is_deterministic():
    enc = _encoder("H-LSTM", seed=5)
    words = np.random.default_rng(5).normal(size=(6, 4))
    a = enc.encode(words, [4, 2]).data
    b = enc.encode(words, [4, 2]).data
    assert a.tobytes() == b.tobytes()


def test_train_mode_dropout_changes_output_with_seeded_rng():
    enc = _encoder("H-LSTM", seed=5)
    words = np.random.default_rng(5).normal(size=(6, 4))
    a = enc.encode(words, [4, 2], train=True, rng=np.random.default_rng(0)).data
    b = enc.encode(words, [4, 2], train=True, rng=np.random.default_rng(0)).data
    c = enc.encode(words, [4, 2]).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_hlstm_with_copying_conversation_layer_reproduces_blstm():
    """Saturated gates and a tiny cell-candidate weight make the upper layer copy its input.

    With i = o = 1, f = 0 and g = tanh(eps * x), each state is tanh(tanh(eps * x)),
    so dividing by eps recovers x to O(eps^2).
    """
    hw = 3
    eps = 1e-5
    seed = 11
    h_enc = _encoder("H-LSTM", seed=seed, hw=hw, hc=hw)
    b_enc = _encoder("B-LSTM", seed=seed, hw=hw)
    for k, layer in enumerate((h_enc.conv_layer.fwd, h_enc.conv_layer.bwd)):
        layer.w_hh.data[:] = 0.0
        layer.w_ih.data[:] = 0.0
        layer.b.data[:] = 50.0  # input and output gates open
        layer.b.data[hw : 2 * hw] = -50.0  # forget gate shut
        layer.b.data[2 * hw : 3 * hw] = 0.0
        # cell candidate reads the forward half (fwd direction) or backward half (bwd direction)
        layer.w_ih.data[2 * hw : 3 * hw, k * hw : (k + 1) * hw] = eps * np.eye(hw)
    words = np.random.default_rng(6).normal(size=(9, 4))
    lengths = [2, 4, 1, 2]
    u_h = h_enc.encode(words, lengths).data / eps
    u_b = b_enc.encode(words, lengths).data
    np.testing.assert_allclose(u_h, u_b, rtol=0, atol=1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(variant="X-LSTM"), dict(word_hidden=0), dict(conv_hidden=0),
    dict(variant="S-LSTM", depth=1), dict(dropout_rate=1.0),
])
def test_invalid_encoder_config(kwargs):
    with pytest.raises(ValueError):
        EncoderConfig(**kwargs)
