"""scikit-learn style wrapper around training and decoding."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Checkpoint, Document, check_shapes, load_checkpoint, save_checkpoint
from .decode import Summary, summarize, trace_gates
from .errors import DataError
from .model import SelectiveEncoderDecoder, param_shapes
from .rouge import rouge_l
from .syntax import SPECIALS, SerializedDoc, Vocab, build_vocab
from .tensor import Tensor
from .train import Adagrad, TrainConfig, evaluate_nll, make_example, train_loop

_ATTENTION = ("additive", "literal")


def as_documents(X, y=None) -> list[Document]:
    """Normalise inputs into :class:`Document` objects.

    ``X`` items may be documents, lists of sentence strings, or a single
    string (one sentence). ``y`` items may be strings or word lists and
    override any summary already on the documents.
    """
    if isinstance(X, (str, Document)):
        raise DataError("X must be a sequence of documents")
    docs = []
    for i, item in enumerate(X):
        if isinstance(item, Document):
            doc = Document(item.id, list(item.sentences), item.summary)
        elif isinstance(item, str):
            doc = Document(str(i), [item])
        else:
            doc = Document(str(i), [str(s) for s in item])
        docs.append(doc)
    if y is not None:
        y = list(y)
        if len(y) != len(docs):
            raise DataError(f"X has {len(docs)} documents but y has {len(y)} summaries")
        for doc, summary in zip(docs, y):
            doc.summary = summary.split() if isinstance(summary, str) else list(summary)
    return docs


class SyntacticSummarizer(BaseEstimator):
    """Pointer-generator summarizer over serialized parse trees with
    per-step selective gates.

    Parameters mirror :class:`~sdse.train.TrainConfig`; ``vocab`` is the
    total vocabulary size including special tokens and parsing symbols.
    ``beam_width`` and ``max_decode_len`` control :meth:`predict`.

    Attributes
    ----------
    vocab_ : Vocab
    params_ : dict of str to Tensor
    optimizer_ : Adagrad
    curve_ : list of CurvePoint
        Training loss curve.
    """

    def __init__(self, hidden=256, embed=128, vocab=50000, lr=0.15, acc_init=0.1,
                 coverage_weight=1.0, max_src_len=1200, max_tgt_len=100, clip_norm=2.0,
                 steps=1000, seed=0, log_every=1, checkpoint_every=0, no_syntax=False,
                 static_gate=False, no_gate=False, no_coverage=False, attention="additive",
                 beam_width=4, max_decode_len=120, drop_root=True):
        self.hidden = hidden
        self.embed = embed
        self.vocab = vocab
        self.lr = lr
        self.acc_init = acc_init
        self.coverage_weight = coverage_weight
        self.max_src_len = max_src_len
        self.max_tgt_len = max_tgt_len
        self.clip_norm = clip_norm
        self.steps = steps
        self.seed = seed
        self.log_every = log_every
        self.checkpoint_every = checkpoint_every
        self.no_syntax = no_syntax
        self.static_gate = static_gate
        self.no_gate = no_gate
        self.no_coverage = no_coverage
        self.attention = attention
        self.beam_width = beam_width
        self.max_decode_len = max_decode_len
        self.drop_root = drop_root

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.field_names()})

    # ----------------------------------------------------------------- fitting

    def _serialize(self, docs) -> list[SerializedDoc]:
        return [d.serialize(self.drop_root) for d in docs]

    def _examples(self, docs, serialized, with_target):
        cfg = self.train_config()
        out = []
        for d, s in zip(docs, serialized):
            if with_target and not d.summary:
                raise DataError(f"document {d.id!r} has no summary")
            out.append(make_example(d.id, s, self.vocab_, d.summary if with_target else None,
                                    cfg.max_src_len, cfg.max_tgt_len, cfg.no_syntax))
        return out

    def build_vocabulary(self, serialized: list[SerializedDoc]) -> Vocab:
        """Vocabulary of at most ``vocab`` ids; every parsing symbol is kept."""
        n_symbols = len({t.text for s in serialized for t in s.tokens if not t.is_word})
        return build_vocab(serialized, self.vocab - len(SPECIALS) - n_symbols)

    def fit(self, X, y=None, progress=None, checkpoint=None):
        """Build the vocabulary from ``X`` and train for ``steps`` updates.

        ``progress`` receives each logged :class:`~sdse.train.CurvePoint`;
        ``checkpoint(step, estimator)`` is called every ``checkpoint_every``
        steps.
        """
        cfg = self.train_config()
        docs = as_documents(X, y)
        serialized = self._serialize(docs)
        self.vocab_ = self.build_vocabulary(serialized)
        examples = self._examples(docs, serialized, True)

        def sink(step, result):
            self.params_, self.optimizer_ = result.params, result.optimizer
            checkpoint(step, self)

        result = train_loop(cfg, examples, len(self.vocab_), checkpoint=sink if checkpoint else None,
                            progress=progress)
        self.params_ = result.params
        self.optimizer_ = result.optimizer
        self.curve_ = result.curve
        return self

    @property
    def model_(self) -> SelectiveEncoderDecoder:
        check_is_fitted(self, "params_")
        return SelectiveEncoderDecoder(self.train_config().model_config(len(self.vocab_)), self.params_)

    # --------------------------------------------------------------- inference

    def examples(self, X, y=None, with_target=False):
        check_is_fitted(self, "vocab_")
        docs = as_documents(X, y)
        return docs, self._examples(docs, self._serialize(docs), with_target)

    def summarize(self, X) -> list[Summary]:
        model = self.model_
        _, examples = self.examples(X)
        symbols = self.vocab_.symbol_ids()
        return [summarize(model, ex, self.beam_width, self.max_decode_len, symbols) for ex in examples]

    def predict(self, X) -> list[str]:
        return [s.text for s in self.summarize(X)]

    def score(self, X, y=None) -> float:
        """Mean ROUGE-L F1 of the predicted summaries."""
        docs = as_documents(X, y)
        preds = self.predict(docs)
        return float(np.mean([rouge_l(p, d.summary or []).f1 for p, d in zip(preds, docs)]))

    def nll(self, X, y=None) -> float:
        """Teacher-forced per-token negative log-likelihood."""
        _, examples = self.examples(X, y, with_target=True)
        return evaluate_nll(self.model_, examples)

    def trace_gates(self, doc, ids=None):
        """Gate trace for one document: ``(rows, source_words)``."""
        _, (ex,) = self.examples([doc], with_target=ids is None)
        return trace_gates(self.model_, ex, ids), ex.source_words

    # ------------------------------------------------------------ persistence

    def save(self, path):
        check_is_fitted(self, "params_")
        meta = {}
        for k, v in self.get_params().items():
            if k == "attention":
                meta[k] = float(_ATTENTION.index(v))
            else:
                meta[k] = float(v)
        opt = self.optimizer_.acc if getattr(self, "optimizer_", None) is not None else None
        save_checkpoint(path, self.params_, opt, meta, self.vocab_)

    @classmethod
    def load(cls, path) -> "SyntacticSummarizer":
        ck = load_checkpoint(path)
        return cls.from_checkpoint(ck)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "SyntacticSummarizer":
        if ck.vocab is None:
            raise DataError("checkpoint has no vocabulary")
        kwargs = {}
        defaults = cls().get_params()
        for k, default in defaults.items():
            if k not in ck.meta:
                continue
            v = ck.meta[k]
            if k == "attention":
                kwargs[k] = _ATTENTION[int(v)]
            elif isinstance(default, bool):
                kwargs[k] = bool(v)
            elif isinstance(default, int):
                kwargs[k] = int(v)
            else:
                kwargs[k] = v
        est = cls(**kwargs)
        est.vocab_ = ck.vocab
        shapes = param_shapes(est.train_config().model_config(len(ck.vocab)))
        check_shapes(shapes, ck.params)
        est.params_ = {k: Tensor(ck.params[k].copy(), requires_grad=True, name=k) for k in shapes}
        opt = Adagrad(est.params_, est.lr, est.acc_init, est.clip_norm)
        for k in shapes:
            if k in ck.optimizer:
                opt.acc[k] = ck.optimizer[k].copy()
        est.optimizer_ = opt
        est.curve_ = []
        return est
