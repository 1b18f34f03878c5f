"""Corpus files, the synthetic copy-task generator, and checkpoints.

Corpus files are JSON Lines, one document per line::

    {"id": "d1", "sentences": ["(S (NP ...) ...)", ...], "summary": "w1 w2 ..."}

A sentence that does not start with ``(`` is read as plain whitespace
separated words; a document is syntactic only if all of its sentences are
trees.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import DataError, ShapeMismatch
from .syntax import SerializedDoc, Vocab, parse_bracketed, serialize_plain, serialize_trees

log = logging.getLogger(__name__)


class Io(DataError):
    pass


class MalformedJson(DataError):
    def __init__(self, line, detail):
        self.line = line
        super().__init__(f"line {line}: malformed JSON ({detail})")


class MissingField(DataError):
    def __init__(self, line, field):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: missing field {field!r}")


@dataclass
class Document:
    id: str
    sentences: list[str]
    summary: list[str] | None = None

    @property
    def is_plain(self):
        return not all(s.lstrip().startswith("(") for s in self.sentences)

    def trees(self):
        return [parse_bracketed(s) for s in self.sentences]

    def serialize(self, drop_root: bool = True) -> SerializedDoc:
        if self.is_plain:
            return serialize_plain(self.sentences)
        return serialize_trees(self.trees(), drop_root)

    def to_json(self):
        out = {"id": self.id, "sentences": self.sentences}
        if self.summary is not None:
            out["summary"] = " ".join(self.summary)
        return json.dumps(out, ensure_ascii=False)


def load_corpus(path, require_summary: bool = True, lenient: bool = False) -> Iterator[Document]:
    """Stream documents from a JSON Lines file.

    Malformed lines raise :class:`MalformedJson` / :class:`MissingField`
    naming the 1-based line number; with ``lenient`` they are logged and
    skipped instead.
    """
    try:
        fh = open(path, encoding="utf-8")
    except OSError as err:
        raise Io(f"cannot open corpus {path}: {err}") from err
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield _parse_line(line, lineno, require_summary)
            except (MalformedJson, MissingField) as err:
                if not lenient:
                    raise
                log.warning("skipping %s", err)


def _parse_line(line, lineno, require_summary):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as err:
        raise MalformedJson(lineno, err.msg) from None
    if not isinstance(obj, dict):
        raise MalformedJson(lineno, "expected an object")
    if "sentences" not in obj:
        raise MissingField(lineno, "sentences")
    sentences = obj["sentences"]
    if not isinstance(sentences, list) or not all(isinstance(s, str) for s in sentences):
        raise MalformedJson(lineno, "'sentences' must be a list of strings")
    summary = obj.get("summary")
    if summary is None and require_summary:
        raise MissingField(lineno, "summary")
    if summary is not None and not isinstance(summary, str):
        raise MalformedJson(lineno, "'summary' must be a string")
    return Document(str(obj.get("id", lineno)), sentences, summary.split() if summary is not None else None)


def write_corpus(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(d.to_json() + "\n")


# ------------------------------------------------------------------ synthetic

LEXICON = {
    "DT": ["the", "a", "every", "this"],
    "NN": ["cat", "dog", "bird", "farmer", "teacher", "river", "garden", "house"],
    "JJ": ["old", "small", "happy", "green", "quiet"],
    "NNP": ["mary", "lucy", "john", "paris", "london"],
    "VBZ": ["sees", "likes", "finds", "hates"],
    "VBD": ["saw", "liked", "found", "visited", "painted"],
    "IN": ["near", "with", "behind", "under"],
    "RB": ["quickly", "often", "today", "slowly"],
}

GRAMMAR = {
    "S": [["NP", "VP"]],
    "NP": [["DT", "NN"], ["DT", "JJ", "NN"], ["NNP"]],
    "VP": [["VBZ", "NP"], ["VBD", "NP", "PP"], ["VBD", "ADVP"], ["VBZ", "NP", "ADVP"]],
    "PP": [["IN", "NP"]],
    "ADVP": [["RB"]],
}

TASKS = ("copy_first_sentence", "copy_first_k_words")


@dataclass
class SynthSpec:
    n_docs: int = 100
    sentences_per_doc: int = 3
    nonce_rate: float = 0.0
    task: str = "copy_first_sentence"
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.nonce_rate <= 1.0:
            raise ValueError("nonce_rate must lie in [0, 1]")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.n_docs < 0 or self.sentences_per_doc < 1 or self.k < 1:
            raise ValueError("n_docs >= 0, sentences_per_doc >= 1 and k >= 1 required")


def _derive(rng, symbol):
    if symbol in LEXICON:
        return [symbol, LEXICON[symbol][rng.integers(len(LEXICON[symbol]))]]
    options = GRAMMAR[symbol]
    rhs = options[rng.integers(len(options))]
    return [symbol] + [_derive(rng, s) for s in rhs]


def _render(node):
    if isinstance(node, str):
        return node
    return "(" + " ".join(_render(c) for c in node) + ")"


def _leaf_slots(node, out):
    # preterminal lists whose second element is the word
    if len(node) == 2 and isinstance(node[1], str):
        out.append(node)
    else:
        for c in node[1:]:
            _leaf_slots(c, out)
    return out


def nonce_word(rng, length=4):
    letters = "abcdefghijklmnopqrstuvwxyz"
    return "zz" + "".join(letters[i] for i in rng.integers(26, size=length))


def synthetic_document(spec: SynthSpec, index: int) -> Document:
    """Document ``index`` of the corpus described by ``spec``.

    Each document draws from its own generator seeded by ``(seed, index)``.
    When a nonce word is injected (probability ``nonce_rate`` per document)
    it replaces one word inside the span the summary is copied from.
    """
    rng = np.random.default_rng([spec.seed, index])
    trees = [_derive(rng, "S") for _ in range(spec.sentences_per_doc)]
    slots = [_leaf_slots(t, []) for t in trees]
    if spec.task == "copy_first_sentence":
        span = slots[0]
    else:
        span = [s for sent in slots for s in sent][:spec.k]
    if rng.random() < spec.nonce_rate:
        span[rng.integers(len(span))][1] = nonce_word(rng)
    summary = [s[1] for s in span]
    return Document(f"syn-{spec.seed}-{index}", [_render(t) for t in trees], summary)


def gen_synthetic(spec: SynthSpec, path=None) -> list[Document]:
    docs = [synthetic_document(spec, i) for i in range(spec.n_docs)]
    if path is not None:
        write_corpus(docs, path)
    return docs


# ---------------------------------------------------------------- checkpoints

MAGIC = b"SDSE"
VERSION = 1


class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedPayload(DataError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray]
    meta: dict[str, float]
    vocab: Vocab | None


def _write_record(fh, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def save_checkpoint(path, params: Mapping, opt_state: Mapping | None = None,
                    meta: Mapping[str, float] | None = None, vocab: Vocab | None = None):
    """Write tensors in the binary record format.

    Besides parameters (under their own names) and optimizer accumulators
    (``opt/<name>``), scalar records carry hyperparameters (``meta/<key>``)
    and the vocabulary (``vocab/<token>`` holding the id, ``symbol/<token>``
    marking parsing symbols), so a checkpoint is self-contained.
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name, t in params.items():
        _write_record(buf, name, getattr(t, "data", t))
    for name, acc in (opt_state or {}).items():
        _write_record(buf, "opt/" + name, acc)
    for key, value in (meta or {}).items():
        _write_record(buf, "meta/" + key, np.asarray(float(value)))
    if vocab is not None:
        for i, w in enumerate(vocab.id_to_word):
            _write_record(buf, "vocab/" + w, np.asarray(float(i)))
        for s in sorted(vocab.symbols):
            _write_record(buf, "symbol/" + s, np.asarray(float(vocab.word_to_id[s])))
    try:
        Path(path).write_bytes(buf.getvalue())
    except OSError as err:
        raise Io(f"cannot write checkpoint {path}: {err}") from err


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise Io(f"cannot read checkpoint {path}: {err}") from err
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    if len(data) < 8:
        raise TruncatedPayload(f"{path}: missing version")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {VERSION}")
    pos = 8
    records: dict[str, np.ndarray] = {}

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedPayload(f"{path}: truncated record at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        records[name] = arr

    params, opt, meta, vocab_ids, symbols = {}, {}, {}, {}, set()
    for name, arr in records.items():
        if name.startswith("opt/"):
            opt[name[4:]] = arr
        elif name.startswith("meta/"):
            meta[name[5:]] = float(arr.item())
        elif name.startswith("vocab/"):
            vocab_ids[int(arr.item())] = name[6:]
        elif name.startswith("symbol/"):
            symbols.add(name[7:])
        else:
            params[name] = arr
    vocab = None
    if vocab_ids:
        ordered = [vocab_ids[i] for i in range(len(vocab_ids))]
        vocab = Vocab()
        vocab.id_to_word = ordered
        vocab.word_to_id = {w: i for i, w in enumerate(ordered)}
        vocab.symbols = symbols
    return Checkpoint(params, opt, meta, vocab)


def check_shapes(expected: Mapping[str, tuple], arrays: Mapping[str, np.ndarray]):
    for name, shape in expected.items():
        if name not in arrays:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        if arrays[name].shape != tuple(shape):
            raise ShapeMismatch(f"checkpoint tensor {name!r}", arrays[name].shape, shape)
