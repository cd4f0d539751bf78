"""Word-level and conversation-level bi-LSTM encoders.

Gate layout in every weight matrix is (input, forget, cell, output), each a
block of ``hidden`` rows. Row-vector convention: ``z = x @ w_ih.T + h @ w_hh.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node, stable_sigmoid
from .initializers import param_rng, xavier_init, zeros

VARIANTS = ("H-LSTM", "B-LSTM", "S-LSTM")
FORGET_BIAS = 1.0


@dataclass
class EncoderConfig:
    word_hidden: int = 100
    conv_hidden: int = 100
    variant: str = "H-LSTM"
    depth: int = 2
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {self.variant!r}; expected one of {VARIANTS}")
        if self.word_hidden < 1 or self.conv_hidden < 1:
            raise ValueError("hidden sizes must be >= 1")
        if self.variant == "S-LSTM" and self.depth < 2:
            raise ValueError("S-LSTM needs depth >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def sentence_dim(self) -> int:
        return 2 * self.word_hidden

    @property
    def output_dim(self) -> int:
        return 2 * self.conv_hidden if self.variant == "H-LSTM" else 2 * self.word_hidden


@dataclass
class LstmCellParams:
    w_ih: Tensor  # [4H x I]
    w_hh: Tensor  # [4H x H]
    b: Tensor  # [4H]

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_ih": self.w_ih, "w_hh": self.w_hh, "b": self.b}

    @classmethod
    def init(cls, input_size: int, hidden_size: int, seed: int, prefix: str) -> "LstmCellParams":
        h4 = 4 * hidden_size
        w_ih = xavier_init((h4, input_size), param_rng(seed, prefix + ".w_ih"), name=prefix + ".w_ih")
        w_hh = xavier_init((h4, hidden_size), param_rng(seed, prefix + ".w_hh"), name=prefix + ".w_hh")
        b = zeros((h4,), name=prefix + ".b")
        b.data[hidden_size : 2 * hidden_size] = FORGET_BIAS
        return cls(w_ih, w_hh, b)


def lstm_cell_step(params: LstmCellParams, x, state):
    """One LSTM step built from primitive tape operations.

    Reference path for the fused :func:`lstm_layer`; also usable directly.
    """
    h, c = state
    H = params.hidden_size
    z = ad.matmul(x, params.w_ih.T) + ad.matmul(h, params.w_hh.T) + params.b
    i = ad.sigmoid(z[..., 0:H])
    f = ad.sigmoid(z[..., H : 2 * H])
    g = ad.tanh(z[..., 2 * H : 3 * H])
    o = ad.sigmoid(z[..., 3 * H : 4 * H])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def _positions(lengths: np.ndarray, reverse: bool):
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    T = int(lengths.max())
    t = np.arange(T)[None, :]
    valid = t < lengths[:, None]
    step = (lengths[:, None] - 1 - t) if reverse else np.broadcast_to(t, valid.shape)
    pos = np.where(valid, offsets[:, None] + step, offsets[:, None])
    return pos, valid


def lstm_layer(x, lengths, params: LstmCellParams, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over several variable-length sequences at once.

    ``x`` stacks the sequences end to end ([sum(lengths) x I]). The result has
    the same row layout and holds the hidden state emitted at each position;
    with ``reverse=True`` each sequence is consumed right to left. Sequences
    are processed at their true length: a sequence's state is never read after
    its last position, so batching does not change any value.
    """
    x = ad.as_tensor(x)
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("lstm_layer needs at least one sequence, each of length >= 1")
    N, I = x.shape
    if int(lengths.sum()) != N:
        raise ad.DimensionError(f"lengths sum to {int(lengths.sum())} but input has {N} rows")
    if I != params.input_size:
        raise ad.DimensionError(f"LSTM expects input width {params.input_size}, got {I}")
    H = params.hidden_size
    B = lengths.size
    pos, valid = _positions(lengths, reverse)
    T = pos.shape[1]
    w_ih, w_hh, b = params.w_ih.data, params.w_hh.data, params.b.data

    X = x.data[pos]  # B x T x I
    XZ = X @ w_ih.T + b  # B x T x 4H
    gates = np.empty((T, B, 4 * H))
    cs = np.empty((T + 1, B, H))
    hs = np.empty((T + 1, B, H))
    tcs = np.empty((T, B, H))
    cs[0] = 0.0
    hs[0] = 0.0
    for t in range(T):
        z = XZ[:, t] + hs[t] @ w_hh.T
        act = gates[t]
        act[:, : 2 * H] = stable_sigmoid(z[:, : 2 * H])
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        act[:, 3 * H :] = stable_sigmoid(z[:, 3 * H :])
        cs[t + 1] = act[:, H : 2 * H] * cs[t] + act[:, :H] * act[:, 2 * H : 3 * H]
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = act[:, 3 * H :] * tcs[t]

    out = np.zeros((N, H))
    out[pos[valid]] = hs[1:].transpose(1, 0, 2)[valid]

    def backward(g_out):
        g_ext = np.where(valid[:, :, None], g_out[pos], 0.0)  # B x T x H
        dZ = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        d_whh = np.zeros_like(w_hh)
        for t in range(T - 1, -1, -1):
            act = gates[t]
            i, f, gg, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
            dh = g_ext[:, t] + dh_next
            tc = tcs[t]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
            d_whh += dz.T @ hs[t]
            dh_next = dz @ w_hh
            dc_next = dc * f
        flat_dz = dZ.reshape(-1, 4 * H)
        d_wih = flat_dz.T @ X.reshape(-1, I)
        d_b = flat_dz.sum(axis=0)
        dX = dZ @ w_ih  # B x T x I
        dx = np.zeros((N, I))
        dx[pos[valid]] = dX[valid]
        return dx, d_wih, d_whh, d_b

    return make_node(out, (x, params.w_ih, params.w_hh, params.b), backward)


@dataclass
class BiLstmParams:
    fwd: LstmCellParams
    bwd: LstmCellParams

    @classmethod
    def init(cls, input_size: int, hidden_size: int, seed: int, prefix: str) -> "BiLstmParams":
        return cls(
            LstmCellParams.init(input_size, hidden_size, seed, prefix + ".fwd"),
            LstmCellParams.init(input_size, hidden_size, seed, prefix + ".bwd"),
        )

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for direction, cell in (("fwd", self.fwd), ("bwd", self.bwd)):
            for key, t in cell.tensors().items():
                out[f"{direction}.{key}"] = t
        return out


def bilstm_states(x, lengths, params: BiLstmParams) -> Tensor:
    """Per-position concatenation [forward state ; backward state]."""
    f = lstm_layer(x, lengths, params.fwd)
    b = lstm_layer(x, lengths, params.bwd, reverse=True)
    return ad.concat([f, b], axis=1)


def encode_sentences(words, lengths, layers: list[BiLstmParams]) -> Tensor:
    """Sentence vectors h_i = [last forward state ; last backward state].

    ``words`` stacks the word vectors of all sentences ([sum(lengths) x D]).
    More than one layer gives a stacked bi-LSTM whose top layer is read out.
    """
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("every sentence needs at least one token")
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    last = offsets + lengths - 1
    inp = words
    for layer in layers[:-1]:
        inp = bilstm_states(inp, lengths, layer)
    top = layers[-1]
    f = lstm_layer(inp, lengths, top.fwd)
    b = lstm_layer(inp, lengths, top.bwd, reverse=True)
    return ad.concat([ad.gather_rows(f, last), ad.gather_rows(b, offsets)], axis=1)


def encode_sentence(words, layers: list[BiLstmParams]) -> Tensor:
    """Encode one sentence ([m x D]) into a vector of size 2*H_w."""
    words = ad.as_tensor(words)
    if words.shape[0] < 1:
        raise ValueError("cannot encode an empty sentence")
    h = encode_sentences(words, [words.shape[0]], layers)
    return ad.reshape(h, (h.shape[1],))


def encode_conversation(sentences, config: EncoderConfig, conv_layer: BiLstmParams | None) -> Tensor:
    """Context-aware sentence vectors U ([n x |u|]) from sentence vectors H ([n x 2H_w]).

    H-LSTM runs a conversation-level bi-LSTM over the chronological sentence
    sequence. B-LSTM and S-LSTM have no cross-sentence layer and return H.
    """
    H = ad.as_tensor(sentences)
    if H.data.ndim != 2 or H.shape[0] < 1:
        raise ValueError("conversation must contain at least one sentence vector")
    if config.variant != "H-LSTM":
        return H
    if conv_layer is None:
        raise ValueError("H-LSTM needs conversation-layer parameters")
    return bilstm_states(H, [H.shape[0]], conv_layer)


@dataclass
class HierEncoder:
    """Parameter container for the word-level and (optional) conversation-level encoders."""

    config: EncoderConfig
    word_layers: list[BiLstmParams]
    conv_layer: BiLstmParams | None = None

    @classmethod
    def init(cls, embed_dim: int, config: EncoderConfig, seed: int) -> "HierEncoder":
        n_word_layers = config.depth if config.variant == "S-LSTM" else 1
        layers = []
        inp = embed_dim
        for k in range(n_word_layers):
            layers.append(BiLstmParams.init(inp, config.word_hidden, seed, f"encoder.word{k}"))
            inp = 2 * config.word_hidden
        conv = None
        if config.variant == "H-LSTM":
            conv = BiLstmParams.init(2 * config.word_hidden, config.conv_hidden, seed, "encoder.conv")
        return cls(config, layers, conv)

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for k, layer in enumerate(self.word_layers):
            for key, t in layer.tensors().items():
                out[f"encoder.word{k}.{key}"] = t
        if self.conv_layer is not None:
            for key, t in self.conv_layer.tensors().items():
                out[f"encoder.conv.{key}"] = t
        return out

    def encode(self, words, lengths, train: bool = False, rng=None) -> Tensor:
        """Word vectors of one conversation -> U, with dropout on H and U at train time."""
        rate = self.config.dropout_rate
        H = encode_sentences(words, lengths, self.word_layers)
        if self.config.variant == "H-LSTM":
            H = ad.dropout(H, rate, train, rng)
            U = encode_conversation(H, self.config, self.conv_layer)
        else:
            U = H
        return ad.dropout(U, rate, train, rng)
