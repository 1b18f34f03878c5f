"""Syntactic encoder, dynamic selective gate and pointer-generator decoder.

Shapes: ``E`` embedding size, ``H`` LSTM size (encoder states are ``2H``),
``V`` fixed vocabulary size, ``n`` the number of word positions in the
source. Gating, attention and copying act on word positions only; parsing
symbol states reach the decoder through the BiLSTM context and the
max-pooled syntactic vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeMismatch
from .syntax import UNK_ID
from .tensor import Tensor


class EmptyInput(DataError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 256
    embed: int = 128
    no_syntax: bool = False
    static_gate: bool = False
    no_gate: bool = False
    attention: str = "additive"

    def __post_init__(self):
        if self.attention not in ("additive", "literal"):
            raise ValueError("attention must be 'additive' or 'literal'")

    @property
    def gate_mode(self):
        if self.no_gate:
            return "none"
        return "static" if self.static_gate else "dynamic"


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    V, E, H = cfg.vocab_size, cfg.embed, cfg.hidden
    H2 = 2 * H
    shapes = {
        "embedding": (V, E),
        "enc_fw/W": (E + H, 4 * H),
        "enc_fw/b": (4 * H,),
        "enc_bw/W": (E + H, 4 * H),
        "enc_bw/b": (4 * H,),
        "dec_init/W": (H2, H),
        "dec_init/b": (H,),
        "dec/W": (E + H2 + H, 4 * H),
        "dec/b": (4 * H,),
        "gate/w_g": (H2, H2),
        "gate/u_g": (H, H2),
        "gate/v_g": (H2, H2),
        "gate/b_g": (H2,),
    }
    if cfg.attention == "literal":
        shapes.update({"attn/w_a": (H2,), "attn/u_a": (H2,), "attn/v_a": (H,), "attn/b_a": (1,)})
    else:
        shapes.update({"attn/w_a": (H2, H2), "attn/u_a": (H2, H2), "attn/v_a": (H, H2),
                       "attn/b_a": (H2,), "attn/score": (H2,)})
    shapes.update({
        "out/w_v": (H2 + H, H),
        "out/b_w": (H,),
        "out/u_v": (H, V),
        "out/b_v": (V,),
        "ptr/w_p": (H2,),
        "ptr/u_p": (H,),
        "ptr/v_p": (E,),
        "ptr/b_p": (1,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int, scale: float = 0.1) -> dict[str, Tensor]:
    """Uniform ``[-scale, scale]`` initialisation, drawn in a fixed order."""
    rng = np.random.default_rng(seed)
    return {name: Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)
            for name, shape in param_shapes(cfg).items()}


@dataclass
class EncoderOutput:
    states: Tensor          # (m, 2H) all positions
    word_states: Tensor     # (n, 2H) word positions only
    d_s: Tensor             # (2H,)
    d_h: Tensor             # (2H,)
    word_mask: np.ndarray   # (m,) bool
    src_ext_ids: np.ndarray  # (n,) extended ids of the word positions
    n_extended: int


@dataclass
class DecoderState:
    lstm: Tensor            # [s, memory], (2H,)
    context: Tensor         # c_{j-1}, (2H,)
    gated: Tensor           # gated states of the previous step, (n, 2H)
    coverage: np.ndarray | Tensor  # (n,)


@dataclass
class StepOutput:
    s: Tensor
    gate: Tensor            # (n, 2H) or broadcastable
    gated: Tensor
    attention: Tensor       # (n,)
    context: Tensor
    p_vocab: Tensor
    p_gen: Tensor
    p_final: Tensor
    extras: dict = field(default_factory=dict)


class SelectiveEncoderDecoder:
    """All model math over a dictionary of parameter tensors.

    The same object serves training (under a :class:`~sdse.tensor.Tape`)
    and inference (no tape, nothing recorded).
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        shapes = param_shapes(cfg)
        for name, shape in shapes.items():
            if name not in params:
                raise KeyError(f"missing parameter {name!r}")
            if params[name].shape != shape:
                raise ShapeMismatch(name, params[name].shape, shape)
        self.cfg = cfg
        self.p = params

    # ------------------------------------------------------------------ encoder

    def encode(self, ids, word_mask, ext_ids=None, n_extended=None) -> EncoderOutput:
        """Run the BiLSTM over a mixed word/symbol id sequence.

        ``ids`` must already be inside the fixed vocabulary (OOV words as UNK);
        ``ext_ids`` are the extended ids used for copying (defaults to ``ids``).
        """
        ids = np.asarray(ids, dtype=np.int64)
        word_mask = np.asarray(word_mask, dtype=bool)
        m = ids.shape[0]
        if m == 0:
            raise EmptyInput("cannot encode an empty sequence")
        if word_mask.shape != (m,):
            raise ShapeMismatch("encode", ids.shape, word_mask.shape)
        if not word_mask.any():
            raise EmptyInput("source has no word tokens")
        H = self.cfg.hidden
        p = self.p
        x = T.embed(p["embedding"], ids)
        zero = Tensor(np.zeros(2 * H))
        fw, bw = [], [None] * m
        st = zero
        for i in range(m):
            st = T.lstm_cell(x[i], st, p["enc_fw/W"], p["enc_fw/b"])
            fw.append(st)
        st = zero
        for i in range(m - 1, -1, -1):
            st = T.lstm_cell(x[i], st, p["enc_bw/W"], p["enc_bw/b"])
            bw[i] = st
        hf = T.stack(fw)[:, :H]
        hb = T.stack(bw)[:, :H]
        states = T.concat([hf, hb], axis=1)
        word_idx = np.flatnonzero(word_mask)
        sym_idx = np.flatnonzero(~word_mask)
        word_states = states[word_idx]
        if sym_idx.size and not self.cfg.no_syntax:
            d_s = T.max_rows(states[sym_idx])
        else:
            d_s = Tensor(np.zeros(2 * H))
        d_h = T.concat([fw[-1][:H], bw[0][:H]])
        if ext_ids is None:
            ext_ids = ids
        ext_ids = np.asarray(ext_ids, dtype=np.int64)
        src_ext = ext_ids[word_idx]
        if n_extended is None:
            n_extended = max(self.cfg.vocab_size, int(ext_ids.max()) + 1)
        return EncoderOutput(states, word_states, d_s, d_h, word_mask, src_ext, n_extended)

    # --------------------------------------------------------------- gate/attn

    def gate_step(self, enc: EncoderOutput, s: Tensor, gated_prev: Tensor, doc_term=None):
        """Gate activations and gated word states for one decode step.

        The gate scales the original encoder states, never the previous gated
        ones, so gating does not compound across steps.
        """
        p = self.p
        mode = self.cfg.gate_mode
        h = enc.word_states
        if mode == "none":
            return Tensor(np.ones(h.shape)), h
        if doc_term is None:
            doc_term = T.add(T.matmul(enc.d_h, p["gate/w_g"]), p["gate/b_g"])
        if mode == "static":
            g = T.sigmoid(doc_term)
        else:
            if gated_prev.shape != h.shape:
                raise ShapeMismatch("gate_step", gated_prev.shape, h.shape)
            pre = T.add(T.matmul(gated_prev, p["gate/v_g"]),
                        T.add(doc_term, T.matmul(s, p["gate/u_g"])))
            g = T.sigmoid(pre)
        return g, T.mul(g, h)

    def attend(self, gated: Tensor, d_s: Tensor, s: Tensor, mask=None, doc_term=None):
        """Attention weights over word positions and the context vector.

        Additive scores are ``score . tanh(W_a h + U_a d_s + V_a s + b_a)``.
        The literal variant ``tanh(w_a.h + u_a.d_s + v_a.s + b_a)`` projects
        each term to a scalar first. ``mask`` optionally removes positions
        (weight exactly 0).
        """
        p = self.p
        if doc_term is None:
            doc_term = T.add(T.matmul(d_s, p["attn/u_a"]), p["attn/b_a"])
        shared = T.add(doc_term, T.matmul(s, p["attn/v_a"]))
        e = T.tanh(T.add(T.matmul(gated, p["attn/w_a"]), shared))
        if self.cfg.attention == "additive":
            e = T.matmul(e, p["attn/score"])
        a = T.softmax(e, mask)
        return a, T.matmul(a, gated)

    # ----------------------------------------------------------------- decoder

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        H = self.cfg.hidden
        s0 = T.tanh(T.add(T.matmul(enc.d_h, self.p["dec_init/W"]), self.p["dec_init/b"]))
        lstm = T.concat([s0, Tensor(np.zeros(H))])
        return DecoderState(lstm, Tensor(np.zeros(2 * H)), enc.word_states,
                            np.zeros(enc.word_states.shape[0]))

    def decoder_step(self, y_prev: Tensor, c_prev: Tensor, lstm_prev: Tensor) -> Tensor:
        """One decoder LSTM step over ``[y_prev, c_prev]``; returns ``[s, memory]``."""
        E, H = self.cfg.embed, self.cfg.hidden
        if y_prev.shape != (E,) or c_prev.shape != (2 * H,) or lstm_prev.shape != (2 * H,):
            raise ShapeMismatch("decoder_step", y_prev.shape, c_prev.shape, lstm_prev.shape)
        return T.lstm_cell(T.concat([y_prev, c_prev]), lstm_prev, self.p["dec/W"], self.p["dec/b"])

    def vocab_dist(self, c: Tensor, s: Tensor) -> Tensor:
        p = self.p
        hidden = T.add(T.matmul(T.concat([c, s]), p["out/w_v"]), p["out/b_w"])
        return T.softmax(T.add(T.matmul(hidden, p["out/u_v"]), p["out/b_v"]))

    def switch_prob(self, c: Tensor, s: Tensor, y_in: Tensor) -> Tensor:
        p = self.p
        z = T.add(T.add(T.matmul(c, p["ptr/w_p"]), T.matmul(s, p["ptr/u_p"])),
                  T.add(T.matmul(y_in, p["ptr/v_p"]), p["ptr/b_p"][0]))
        return T.sigmoid(z)

    @staticmethod
    def final_dist(p_gen: Tensor, p_vocab: Tensor, attention: Tensor, src_ext_ids, size: int) -> Tensor:
        """Mix generation and copying over the extended vocabulary.

        ``attention`` and ``src_ext_ids`` cover word positions only, so parsing
        symbols never receive copy mass.
        """
        gen = T.mul(p_gen, T.pad(p_vocab, size))
        copy = T.mul(T.sub(Tensor(1.0), p_gen), T.scatter_add(attention, src_ext_ids, size))
        return T.add(gen, copy)

    # -------------------------------------------------------------------- step

    def doc_terms(self, enc: EncoderOutput):
        """Per-document constants reused at every decode step."""
        p = self.p
        gate = T.add(T.matmul(enc.d_h, p["gate/w_g"]), p["gate/b_g"]) if self.cfg.gate_mode != "none" else None
        attn = T.add(T.matmul(enc.d_s, p["attn/u_a"]), p["attn/b_a"])
        return gate, attn

    def step(self, enc: EncoderOutput, state: DecoderState, y_prev_id: int, terms=None):
        """Advance one decode step from the previous token id (extended ids allowed)."""
        H = self.cfg.hidden
        if terms is None:
            terms = self.doc_terms(enc)
        feed = y_prev_id if y_prev_id < self.cfg.vocab_size else UNK_ID
        y = T.embed(self.p["embedding"], np.array([feed]))[0]
        lstm = self.decoder_step(y, state.context, state.lstm)
        s = lstm[:H]
        g, gated = self.gate_step(enc, s, state.gated, terms[0])
        a, c = self.attend(gated, enc.d_s, s, doc_term=terms[1])
        p_vocab = self.vocab_dist(c, s)
        p_gen = self.switch_prob(c, s, y)
        p_final = self.final_dist(p_gen, p_vocab, a, enc.src_ext_ids, enc.n_extended)
        out = StepOutput(s, g, gated, a, c, p_vocab, p_gen, p_final)
        cov = state.coverage
        new_cov = T.add(cov, a) if isinstance(cov, Tensor) else cov + a.data
        return out, DecoderState(lstm, c, gated, new_cov)

    def gate_matrix(self, g: Tensor, n: int) -> np.ndarray:
        """Gate activations as an ``(n, 2H)`` array (static gates are broadcast)."""
        return np.broadcast_to(g.data, (n, 2 * self.cfg.hidden))
