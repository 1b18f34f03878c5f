"""Beam-search decoding and gate tracing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .model import SelectiveEncoderDecoder
from .syntax import BOS_ID, EOS_ID, PAD_ID, ExtendedVocab
from .train import Example


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    state: Any = None
    trace: list = field(default_factory=list)


StepFn = Callable[[Any, int], "tuple[np.ndarray, Any, Any]"]


def beam_search(step: StepFn, start_state, width: int = 4, max_len: int = 120,
                bos: int = BOS_ID, eos: int = EOS_ID, banned: Sequence[int] = ()) -> Hypothesis:
    """Generic beam search over a next-token distribution.

    ``step(state, prev_token)`` returns ``(probs, new_state, trace_item)``.
    Every live hypothesis is expanded over all tokens and the ``width`` best
    expansions by summed log-probability survive; those ending in ``eos``
    are retired to the finished list. Search stops after ``max_len`` steps,
    when no hypothesis is live, or once ``width`` hypotheses have finished
    and the best of them scores at least as high as every live one (scores
    never increase, so nothing live could overtake it). Ties prefer the
    earlier hypothesis, then the lower token id. No length normalisation.

    Returns the best finished hypothesis (EOS stripped), or the best
    unfinished one when nothing finished.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    live = [Hypothesis([], 0.0, start_state)]
    done: list[Hypothesis] = []
    banned = np.asarray(sorted(set(banned)), dtype=np.int64)
    for _ in range(max_len):
        cands = []
        for k, hyp in enumerate(live):
            prev = hyp.tokens[-1] if hyp.tokens else bos
            probs, new_state, item = step(hyp.state, prev)
            with np.errstate(divide="ignore"):
                logp = np.log(np.asarray(probs, dtype=np.float64))
            if banned.size:
                logp[banned[banned < logp.shape[0]]] = -np.inf
            # at most `width` expansions of one hypothesis can survive
            for tok in np.lexsort((np.arange(logp.shape[0]), -logp))[:width]:
                if logp[tok] > -np.inf:
                    cands.append((hyp.score + float(logp[tok]), k, int(tok), new_state, item))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        parents, live = live, []
        for score, k, tok, new_state, item in cands[:width]:
            parent = parents[k]
            trace = parent.trace + [item]
            if tok == eos:
                done.append(Hypothesis(list(parent.tokens), score, new_state, trace))
            else:
                live.append(Hypothesis(parent.tokens + [tok], score, new_state, trace))
        if not live:
            break
        if len(done) >= width and max(h.score for h in done) >= live[0].score:
            break
    pool = done or live
    if not pool:
        return Hypothesis([], 0.0, start_state)
    return max(pool, key=lambda h: h.score)


def greedy_search(step: StepFn, start_state, max_len: int = 120, bos: int = BOS_ID,
                  eos: int = EOS_ID, banned: Sequence[int] = ()) -> Hypothesis:
    """Argmax decoding, written independently of :func:`beam_search`."""
    tokens, score, state, prev, trace = [], 0.0, start_state, bos, []
    banned = list(banned)
    for _ in range(max_len):
        probs, state, item = step(state, prev)
        probs = np.array(probs, dtype=np.float64)
        probs[[b for b in banned if b < probs.shape[0]]] = 0.0
        tok = int(np.argmax(probs))
        score += float(np.log(probs[tok]))
        trace.append(item)
        if tok == eos:
            return Hypothesis(tokens, score, state, trace)
        tokens.append(tok)
        prev = tok
    return Hypothesis(tokens, score, state, trace)


@dataclass
class Summary:
    tokens: list[str]
    ids: list[int]
    score: float
    gates: np.ndarray       # (steps + 1, n) mean gate per word position; row 0 is the initial gate
    attention: np.ndarray   # (steps, n)

    @property
    def text(self):
        return " ".join(self.tokens)


def _banned_ids(model: SelectiveEncoderDecoder, symbol_ids):
    return [PAD_ID, BOS_ID, *symbol_ids]


def _model_step(model: SelectiveEncoderDecoder, enc, terms):
    n = enc.word_states.shape[0]

    def step(state, prev):
        out, new_state = model.step(enc, state, prev, terms)
        gate = model.gate_matrix(out.gate, n).mean(axis=1)
        return out.p_final.data, new_state, (gate, out.attention.data)

    return step


def initial_gate_row(model: SelectiveEncoderDecoder, enc) -> np.ndarray:
    """Mean gate per word position before the first step.

    The dynamic gate starts at exactly 1; a static gate is the same at every
    step, so its row 0 equals every later row.
    """
    n = enc.word_states.shape[0]
    if model.cfg.gate_mode == "static":
        g, _ = model.gate_step(enc, None, None)
        return model.gate_matrix(g, n).mean(axis=1)
    return np.ones(n)


def summarize(model: SelectiveEncoderDecoder, ex: Example, width: int = 4, max_len: int = 120,
              symbol_ids: Sequence[int] = ()) -> Summary:
    """Beam-search a summary; extended ids are mapped back to source words."""
    enc = model.encode(ex.ids, ex.word_mask, ex.ext_ids, len(ex.extended))
    terms = model.doc_terms(enc)
    hyp = beam_search(_model_step(model, enc, terms), model.initial_state(enc), width, max_len,
                      banned=_banned_ids(model, symbol_ids))
    return _to_summary(model, enc, ex.extended, hyp)


def _to_summary(model, enc, extended: ExtendedVocab, hyp: Hypothesis) -> Summary:
    n = enc.word_states.shape[0]
    rows = [initial_gate_row(model, enc)] + [g for g, _ in hyp.trace]
    att = np.array([a for _, a in hyp.trace]) if hyp.trace else np.zeros((0, n))
    return Summary([extended.word(i) for i in hyp.tokens], list(hyp.tokens), hyp.score,
                   np.array(rows), att)


def trace_gates(model: SelectiveEncoderDecoder, ex: Example, ids: Sequence[int] | None = None) -> np.ndarray:
    """Mean gate activation per (decode step, source word position).

    Runs the decoder teacher-forced on ``ids`` (extended ids; defaults to the
    example's target). Row 0 is the gate before the first step.
    """
    if ids is None:
        ids = ex.target
    enc = model.encode(ex.ids, ex.word_mask, ex.ext_ids, len(ex.extended))
    terms = model.doc_terms(enc)
    state = model.initial_state(enc)
    n = enc.word_states.shape[0]
    rows = [initial_gate_row(model, enc)]
    prev = BOS_ID
    for y in ids:
        out, state = model.step(enc, state, prev, terms)
        rows.append(model.gate_matrix(out.gate, n).mean(axis=1))
        prev = int(y)
    return np.array(rows)


def gate_dynamism(rows: np.ndarray) -> float:
    """Row-to-row standard deviation of the gate trace, averaged over columns.

    The fixed initial row is excluded so only decoder-driven variation counts.
    """
    body = rows[1:]
    if body.shape[0] < 2:
        return 0.0
    # shift by the first row so identical rows give exactly zero
    return float((body - body[0]).std(axis=0).mean())


def write_trace(rows: np.ndarray, words: Sequence[str], fh):
    fh.write("step\t" + "\t".join(words) + "\n")
    for j, row in enumerate(rows):
        fh.write(f"{j}\t" + "\t".join(repr(float(v)) for v in row) + "\n")
