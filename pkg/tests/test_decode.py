import io
import itertools

import numpy as np
import pytest

from sdse.corpus import SynthSpec, gen_synthetic
from sdse.decode import beam_search, gate_dynamism, greedy_search, summarize, trace_gates, write_trace
from sdse.model import ModelConfig, SelectiveEncoderDecoder, init_params
from sdse.syntax import build_vocab
from sdse.train import make_example

# toy vocabulary: 0,1,2 content tokens, 3 EOS, 4 BOS
EOS, BOS = 3, 4


def toy_step(table):
    """Step function reading next-token distributions from ``table[prefix]``;
    after two tokens EOS is certain."""

    def step(prefix, prev):
        if prev != BOS:
            prefix = prefix + (prev,)
        if len(prefix) >= 2:
            p = np.zeros(5)
            p[EOS] = 1.0
        else:
            p = table[prefix]
        return p, prefix, None

    return step


def random_table(rng):
    table = {}
    for prefix in [()] + [(a,) for a in range(3)]:
        p = np.r_[rng.dirichlet(np.ones(4)), 0.0]
        table[prefix] = p
    return table


def enumerate_best(table):
    """Exhaustive search over all sequences of length <= 3 ending in EOS."""
    best, best_p = None, -1.0
    for k in range(3):
        for seq in itertools.product(range(3), repeat=k):
            p, prefix = 1.0, ()
            for tok in seq:
                p *= table[prefix][tok] if len(prefix) < 2 else 0.0
                prefix += (tok,)
            p *= table[prefix][EOS] if len(prefix) < 2 else 1.0
            if p > best_p:
                best, best_p = list(seq), p
    return best, best_p


def engineered_table():
    t = {(): np.array([0.5, 0.4, 0.0, 0.1, 0.0])}
    t[(0,)] = np.array([0.3, 0.3, 0.3, 0.1, 0.0])
    t[(1,)] = np.array([0.0, 0.0, 0.05, 0.95, 0.0])
    t[(2,)] = np.array([0.25, 0.25, 0.25, 0.25, 0.0])
    return t


def test_engineered_toy_greedy_is_suboptimal():
    table = engineered_table()
    step = toy_step(table)
    greedy = greedy_search(step, (), max_len=3, bos=BOS, eos=EOS)
    assert greedy.tokens[0] == 0
    best, best_p = enumerate_best(table)
    assert best == [1] and best_p == pytest.approx(0.38)
    for width in (2, 4):
        hyp = beam_search(step, (), width=width, max_len=3, bos=BOS, eos=EOS, banned=[BOS])
        assert hyp.tokens == best
        assert hyp.score == pytest.approx(np.log(best_p), abs=1e-12)


def test_beam_matches_exhaustive_search_on_random_toys():
    rng = np.random.default_rng(0)
    for _ in range(200):
        table = random_table(rng)
        best, best_p = enumerate_best(table)
        hyp = beam_search(toy_step(table), (), width=4, max_len=3, bos=BOS, eos=EOS, banned=[BOS])
        assert hyp.tokens == best
        assert np.exp(hyp.score) == pytest.approx(best_p, rel=1e-12)


def test_width_one_equals_greedy_bitwise():
    rng = np.random.default_rng(1)
    for _ in range(50):
        step = toy_step(random_table(rng))
        g = greedy_search(step, (), max_len=3, bos=BOS, eos=EOS, banned=[BOS])
        b = beam_search(step, (), width=1, max_len=3, bos=BOS, eos=EOS, banned=[BOS])
        assert g.tokens == b.tokens
        assert np.float64(g.score).tobytes() == np.float64(b.score).tobytes()


def test_immediate_eos_gives_empty_summary():
    def step(state, prev):
        p = np.zeros(5)
        p[EOS] = 1.0
        return p, state, None

    assert beam_search(step, None, width=4, bos=BOS, eos=EOS).tokens == []
    assert greedy_search(step, None, bos=BOS, eos=EOS).tokens == []


def test_max_len_returns_best_unfinished():
    def step(state, prev):
        return np.array([0.9, 0.1, 0.0, 0.0, 0.0]), state, None

    hyp = beam_search(step, None, width=2, max_len=4, bos=BOS, eos=EOS)
    assert hyp.tokens == [0, 0, 0, 0]


def test_bad_width():
    with pytest.raises(ValueError):
        beam_search(lambda s, p: (np.ones(5) / 5, s, None), None, width=0)


@pytest.fixture(scope="module")
def small_model():
    docs = gen_synthetic(SynthSpec(n_docs=3, nonce_rate=1.0, seed=4))
    ser = [d.serialize() for d in docs]
    vocab = build_vocab(ser, 40)
    exs = [make_example(d.id, s, vocab, d.summary) for d, s in zip(docs, ser)]
    cfg = ModelConfig(vocab_size=len(vocab), hidden=6, embed=4)
    return SelectiveEncoderDecoder(cfg, init_params(cfg, 2, scale=0.5)), exs, vocab


def test_model_width_one_equals_greedy(small_model):
    model, exs, vocab = small_model
    from sdse.decode import _banned_ids, _model_step

    for ex in exs:
        enc = model.encode(ex.ids, ex.word_mask, ex.ext_ids, len(ex.extended))
        step = _model_step(model, enc, model.doc_terms(enc))
        banned = _banned_ids(model, vocab.symbol_ids())
        g = greedy_search(step, model.initial_state(enc), max_len=8, banned=banned)
        b = beam_search(step, model.initial_state(enc), width=1, max_len=8, banned=banned)
        assert g.tokens == b.tokens and g.score == b.score


def test_summary_never_emits_symbols(small_model):
    model, exs, vocab = small_model
    symbols = set(vocab.symbol_ids())
    for ex in exs:
        s = summarize(model, ex, width=3, max_len=10, symbol_ids=sorted(symbols))
        assert not symbols & set(s.ids)
        assert s.gates.shape == (s.attention.shape[0] + 1, len(ex.source_words))
        assert np.all(s.gates[0] == 1.0)
        assert s.attention.shape[1] == len(ex.source_words)


def test_summary_deterministic(small_model):
    model, exs, vocab = small_model
    a = summarize(model, exs[0], 4, 10, vocab.symbol_ids())
    b = summarize(model, exs[0], 4, 10, vocab.symbol_ids())
    assert a.ids == b.ids and a.score == b.score


def test_trace_gates_rows(small_model):
    model, exs, _ = small_model
    rows = trace_gates(model, exs[0])
    assert rows.shape == (len(exs[0].target) + 1, len(exs[0].source_words))
    assert np.all(rows[0] == 1.0)
    assert np.all((rows[1:] > 0) & (rows[1:] < 1))


def test_static_trace_rows_identical(small_model):
    model, exs, _ = small_model
    static = SelectiveEncoderDecoder(ModelConfig(**{**model.cfg.__dict__, "static_gate": True}), model.p)
    rows = trace_gates(static, exs[0])
    assert all(r.tobytes() == rows[0].tobytes() for r in rows)
    assert gate_dynamism(rows) == 0.0


def test_gate_dynamism_and_trace_format():
    rows = np.array([[1.0, 1.0], [0.2, 0.4], [0.4, 0.4]])
    assert gate_dynamism(rows) == pytest.approx(0.05)
    fh = io.StringIO()
    write_trace(rows, ["mary", "lucy"], fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "step\tmary\tlucy"
    assert lines[2] == "1\t0.2\t0.4"
