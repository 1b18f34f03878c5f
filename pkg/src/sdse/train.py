"""Teacher-forced training with the coverage-augmented NLL and adagrad."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import DataError, NonFiniteGradient, NumericError
from .model import ModelConfig, SelectiveEncoderDecoder, init_params
from .syntax import (BOS_ID, EOS_ID, UNK_ID, ExtendedVocab, SerializedDoc, Vocab, encode_extended,
                     strip_symbols)
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class EmptyTarget(DataError):
    pass


@dataclass
class TrainConfig:
    hidden: int = 256
    embed: int = 128
    vocab: int = 50000
    lr: float = 0.15
    acc_init: float = 0.1
    coverage_weight: float = 1.0
    max_src_len: int = 1200
    max_tgt_len: int = 100
    clip_norm: float = 2.0
    steps: int = 1000
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0
    no_syntax: bool = False
    static_gate: bool = False
    no_gate: bool = False
    no_coverage: bool = False
    attention: str = "additive"

    def __post_init__(self):
        for name in ("hidden", "embed", "vocab", "lr", "acc_init", "max_src_len",
                     "max_tgt_len", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.coverage_weight < 0:
            raise ValueError("coverage_weight must be >= 0")
        if self.steps < 0 or self.log_every < 1 or self.checkpoint_every < 0:
            raise ValueError("steps/log_every/checkpoint_every out of range")

    @property
    def effective_coverage_weight(self):
        return 0.0 if self.no_coverage else self.coverage_weight

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, hidden=self.hidden, embed=self.embed,
                           no_syntax=self.no_syntax, static_gate=self.static_gate,
                           no_gate=self.no_gate, attention=self.attention)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        return asdict(self)


@dataclass
class Example:
    """A document ready for the model."""

    doc_id: str
    ids: np.ndarray          # fixed-vocab ids fed to the encoder
    ext_ids: np.ndarray      # extended ids (OOV words get V + j)
    word_mask: np.ndarray
    extended: ExtendedVocab
    target: np.ndarray | None  # extended ids, EOS-terminated
    source_words: list[str]


def make_example(doc_id: str, doc: SerializedDoc, vocab: Vocab, summary: Sequence[str] | None = None,
                 max_src_len: int = 1200, max_tgt_len: int = 100, no_syntax: bool = False) -> Example:
    if no_syntax:
        doc = strip_symbols(doc)
    doc = doc.truncate(max_src_len)
    ext_ids, extended = encode_extended(doc, vocab)
    V = len(vocab)
    ext = np.array(ext_ids, dtype=np.int64)
    ids = np.where(ext >= V, UNK_ID, ext)
    target = None
    if summary is not None:
        words = list(summary)[:max_tgt_len - 1]
        target = np.array([extended.id(w) for w in words] + [EOS_ID], dtype=np.int64)
    return Example(doc_id, ids, ext, np.array(doc.word_mask, dtype=bool), extended, target, doc.words)


@dataclass
class LossBreakdown:
    loss: float
    nll: float
    coverage: float
    steps: int
    step_nll: list[float]
    step_coverage: list[float]
    gates: list[np.ndarray]
    attention: list[np.ndarray]


def sequence_loss(model: SelectiveEncoderDecoder, ex: Example, coverage_weight: float = 1.0):
    """Mean over target steps of ``-log p(y_j) + lambda * sum_i min(a_ji, cov_ji)``.

    Coverage ``cov_j`` is the sum of attention over earlier steps, so it is
    zero at the first step. Returns the loss tensor and a breakdown.
    """
    if ex.target is None or len(ex.target) == 0:
        raise EmptyTarget(f"document {ex.doc_id!r} has no target")
    if ex.target[-1] != EOS_ID:
        raise DataError(f"document {ex.doc_id!r}: target must end with EOS")
    enc = model.encode(ex.ids, ex.word_mask, ex.ext_ids, len(ex.extended))
    terms = model.doc_terms(enc)
    state = model.initial_state(enc)
    n = enc.word_states.shape[0]
    coverage = Tensor(np.zeros(n))
    prev = BOS_ID
    nll_terms, cov_terms = [], []
    b = LossBreakdown(0.0, 0.0, 0.0, len(ex.target), [], [], [], [])
    for y in ex.target:
        out, state = model.step(enc, state, prev, terms)
        nll = T.scale(T.log(out.p_final[int(y)], PROB_FLOOR), -1.0)
        cov = T.total(T.minimum(out.attention, coverage))
        coverage = T.add(coverage, out.attention)
        nll_terms.append(nll)
        cov_terms.append(cov)
        b.step_nll.append(float(nll.data))
        b.step_coverage.append(float(cov.data))
        b.gates.append(model.gate_matrix(out.gate, n).mean(axis=1))
        b.attention.append(out.attention.data)
        prev = int(y)
    steps = len(nll_terms)
    nll_sum = nll_terms[0]
    for t in nll_terms[1:]:
        nll_sum = T.add(nll_sum, t)
    cov_sum = cov_terms[0]
    for t in cov_terms[1:]:
        cov_sum = T.add(cov_sum, t)
    if coverage_weight:
        total = T.add(nll_sum, T.scale(cov_sum, coverage_weight))
    else:
        total = nll_sum
    loss = T.scale(total, 1.0 / steps)
    b.loss = float(loss.data)
    b.nll = float(nll_sum.data) / steps
    b.coverage = float(cov_sum.data) / steps
    return loss, b


class Adagrad:
    """Adagrad with global-norm clipping applied before the update."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.15, acc_init: float = 0.1,
                 clip_norm: float | None = 2.0):
        self.lr = lr
        self.clip_norm = clip_norm
        self.acc = {k: np.full(v.shape, acc_init) for k, v in params.items()}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> float:
        """Update ``params`` in place; returns the pre-clipping gradient norm."""
        sq = 0.0
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
            sq += float(np.sum(g * g))
        norm = float(np.sqrt(sq))
        if not np.isfinite(norm):
            raise NonFiniteGradient("gradient is not finite")
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / norm
        for k, g in grads.items():
            if factor != 1.0:
                g = g * factor
            acc = self.acc[k]
            acc += g * g
            params[k].data -= self.lr * g / np.sqrt(acc)
        return norm


def adagrad_step(params, grads, opt_state: Adagrad, lr=None, clip_norm=None):
    if lr is not None:
        opt_state.lr = lr
    if clip_norm is not None:
        opt_state.clip_norm = clip_norm
    opt_state.step(params, grads)
    return params


@dataclass
class CurvePoint:
    step: int
    loss: float
    nll: float
    coverage: float


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    optimizer: Adagrad
    curve: list[CurvePoint]
    model: SelectiveEncoderDecoder


def train_step(model: SelectiveEncoderDecoder, opt: Adagrad, ex: Example, coverage_weight: float):
    with T.Tape() as tape:
        loss, info = sequence_loss(model, ex, coverage_weight)
    grads = T.backward(tape, loss, model.p)
    opt.step(model.p, grads)
    return info


def train_loop(cfg: TrainConfig, examples: Sequence[Example], vocab_size: int,
               checkpoint: Callable[[int, TrainResult], None] | None = None,
               params: dict[str, Tensor] | None = None,
               optimizer: Adagrad | None = None,
               progress: Callable[[CurvePoint], None] | None = None) -> TrainResult:
    """Train on ``examples`` one sequence at a time for ``cfg.steps`` updates.

    Each pass visits the examples in an order drawn from the seeded
    generator, so a fixed seed reproduces the loss curve exactly. The curve
    records the mean over the last ``log_every`` updates.
    """
    examples = [ex for ex in examples]
    if not examples:
        raise DataError("training corpus is empty")
    mcfg = cfg.model_config(vocab_size)
    if params is None:
        params = init_params(mcfg, cfg.seed)
    model = SelectiveEncoderDecoder(mcfg, params)
    opt = optimizer or Adagrad(params, cfg.lr, cfg.acc_init, cfg.clip_norm)
    rng = np.random.default_rng(cfg.seed + 1)
    order: list[int] = []
    curve: list[CurvePoint] = []
    window = []
    result = TrainResult(params, opt, curve, model)
    lam = cfg.effective_coverage_weight
    for step in range(1, cfg.steps + 1):
        if not order:
            order = list(rng.permutation(len(examples)))
        ex = examples[order.pop()]
        try:
            info = train_step(model, opt, ex, lam)
        except NumericError as err:
            raise type(err)(f"document {ex.doc_id!r}, step {step}: {err}") from err
        window.append((info.loss, info.nll, info.coverage))
        if step % cfg.log_every == 0 or step == cfg.steps:
            arr = np.mean(window, axis=0)
            point = CurvePoint(step, float(arr[0]), float(arr[1]), float(arr[2]))
            curve.append(point)
            window = []
            if progress is not None:
                progress(point)
        if checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            checkpoint(step, result)
    return result


def evaluate_nll(model: SelectiveEncoderDecoder, examples: Iterable[Example]) -> float:
    """Per-token NLL (teacher forced) averaged over all target tokens."""
    total, count = 0.0, 0
    for ex in examples:
        _, info = sequence_loss(model, ex, 0.0)
        total += sum(info.step_nll)
        count += info.steps
    return total / max(count, 1)


def write_curve(curve: Sequence[CurvePoint], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tloss\tnll\tcoverage\n")
        for p in curve:
            fh.write(f"{p.step}\t{p.loss!r}\t{p.nll!r}\t{p.coverage!r}\n")


def tiny_gradcheck_problem(hidden=8, embed=6, vocab=24, seed=1, attention="additive",
                           max_src=15, max_tgt=5):
    """A small full-model loss for finite-difference checking.

    Draws a one-sentence synthetic document with a nonce word (so copying
    through an extended id is exercised) whose serialization fits in
    ``max_src`` tokens, and builds a vocabulary of exactly ``vocab`` entries.
    Parameters are drawn from U[-0.5, 0.5] so nonlinearities are not all in
    their linear regime.
    """
    from .corpus import SynthSpec, synthetic_document

    spec = SynthSpec(n_docs=1, sentences_per_doc=1, nonce_rate=1.0, seed=seed)
    for index in range(10_000):
        doc = synthetic_document(spec, index)
        ser = doc.serialize()
        if len(ser) <= max_src and len(doc.summary) <= max_tgt - 1:
            break
    else:  # pragma: no cover - the grammar produces short sentences quickly
        raise DataError("no short enough synthetic document")
    base = build_exact_vocab(ser, vocab)
    ex = make_example(doc.id, ser, base, doc.summary, max_src_len=max_src, max_tgt_len=max_tgt)
    cfg = ModelConfig(vocab_size=len(base), hidden=hidden, embed=embed, attention=attention)
    params = init_params(cfg, seed, scale=0.5)
    model = SelectiveEncoderDecoder(cfg, params)
    return model, ex


def build_exact_vocab(doc: SerializedDoc, size: int) -> Vocab:
    """Vocabulary of exactly ``size`` ids: specials, the document's symbols,
    all but one of its words (so one OOV remains) and filler entries."""
    symbols = list(dict.fromkeys(t.text for t in doc.tokens if not t.is_word))
    words = [w for w in dict.fromkeys(doc.words) if not w.startswith("zz")]
    room = size - 4 - len(symbols)
    if room < 0:
        raise ValueError(f"vocab size {size} is smaller than specials + {len(symbols)} symbols")
    words = words[:room]
    words += [f"<fill{k}>" for k in range(room - len(words))]
    return Vocab(words=words, symbols=symbols)


def full_model_gradcheck(hidden=8, embed=6, vocab=24, seed=1, eps=1e-5, coverage_weight=1.0,
                         attention="additive"):
    model, ex = tiny_gradcheck_problem(hidden, embed, vocab, seed, attention)
    return T.grad_check(lambda: sequence_loss(model, ex, coverage_weight)[0], model.p, eps)
