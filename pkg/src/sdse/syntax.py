"""Constituency trees: parsing, depth-first serialization and vocabularies.

Trees arrive as PTB-style bracketed strings such as
``(S (NP (NNP Mary)) (VP (VBZ hates) (NP (NNP Lucy))))``. Serialization
walks each tree in pre-order, emitting every internal node label as a
symbol token before its subtree and every leaf as a word token.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import DataError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


class TreeSyntaxError(DataError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class UnbalancedBrackets(TreeSyntaxError):
    pass


class EmptyNode(TreeSyntaxError):
    pass


class TrailingInput(TreeSyntaxError):
    pass


class EmptyDocument(DataError):
    pass


@dataclass
class ParseTree:
    label: str | None = None
    word: str | None = None
    children: list["ParseTree"] = field(default_factory=list)

    @classmethod
    def leaf(cls, word):
        return cls(word=word)

    @property
    def is_leaf(self):
        return self.word is not None

    def leaves(self):
        if self.is_leaf:
            return [self.word]
        return [w for c in self.children for w in c.leaves()]

    def n_internal(self):
        if self.is_leaf:
            return 0
        return 1 + sum(c.n_internal() for c in self.children)

    def n_leaves(self):
        return len(self.leaves())

    def to_bracketed(self):
        if self.is_leaf:
            return self.word
        return "(" + " ".join([self.label] + [c.to_bracketed() for c in self.children]) + ")"

    def __str__(self):
        return self.to_bracketed()


def parse_bracketed(text: str) -> ParseTree:
    """Parse one bracketed tree.

    Internal nodes are ``(LABEL child ...)``; a bare token is a leaf. Raises
    :class:`UnbalancedBrackets`, :class:`EmptyNode` or
    :class:`TrailingInput`, each carrying the byte offset of the problem.
    """
    raw = text.encode("utf-8")
    tokens = _tokenize(raw)
    if not tokens:
        raise EmptyNode("empty input", 0)
    pos = 0

    def node():
        nonlocal pos
        tok, off = tokens[pos]
        if tok == ")":
            raise UnbalancedBrackets("unexpected ')'", off)
        if tok != "(":
            pos += 1
            return ParseTree.leaf(tok)
        pos += 1
        if pos >= len(tokens):
            raise UnbalancedBrackets("unclosed '('", off)
        label, loff = tokens[pos]
        if label == ")":
            raise EmptyNode("node with no label", off)
        if label == "(":
            raise EmptyNode("node with no label", loff)
        pos += 1
        children = []
        while True:
            if pos >= len(tokens):
                raise UnbalancedBrackets("unclosed '('", off)
            if tokens[pos][0] == ")":
                pos += 1
                break
            children.append(node())
        if not children:
            raise EmptyNode(f"node {label!r} has no children", off)
        return ParseTree(label=label, children=children)

    if tokens[0][0] != "(":
        raise EmptyNode("expected '('", tokens[0][1])
    tree = node()
    if pos != len(tokens):
        tok, off = tokens[pos]
        if tok == ")":
            raise UnbalancedBrackets("unmatched ')'", off)
        raise TrailingInput("unexpected input after tree", off)
    return tree


def _tokenize(raw: bytes):
    out = []
    i, n = 0, len(raw)
    while i < n:
        ch = raw[i:i + 1]
        if ch.isspace():
            i += 1
        elif ch in (b"(", b")"):
            out.append((ch.decode(), i))
            i += 1
        else:
            j = i
            while j < n and not raw[j:j + 1].isspace() and raw[j:j + 1] not in (b"(", b")"):
                j += 1
            out.append((raw[i:j].decode("utf-8"), i))
            i = j
    return out


class Kind(Enum):
    WORD = "word"
    SYMBOL = "symbol"


@dataclass(frozen=True)
class Token:
    text: str
    kind: Kind

    @property
    def is_word(self):
        return self.kind is Kind.WORD


def serialize_dfs(tree: ParseTree, drop_root: bool = True) -> list[Token]:
    """Pre-order token stream: each node's label, then its children.

    ``drop_root`` omits the outermost label (typically ``S``) unless the root
    is itself a preterminal.
    """
    out: list[Token] = []

    def visit(t):
        if t.is_leaf:
            out.append(Token(t.word, Kind.WORD))
            return
        out.append(Token(t.label, Kind.SYMBOL))
        for c in t.children:
            visit(c)

    # a preterminal root is the whole tree, not a wrapper: keep it
    if drop_root and not tree.is_leaf and not all(c.is_leaf for c in tree.children):
        for c in tree.children:
            visit(c)
    else:
        visit(tree)
    return out


@dataclass
class SerializedDoc:
    tokens: list[Token]
    word_mask: list[bool]
    sentence_bounds: list[tuple[int, int]]

    def __len__(self):
        return len(self.tokens)

    @property
    def words(self):
        return [t.text for t in self.tokens if t.is_word]

    @property
    def n_symbols(self):
        return len(self.tokens) - sum(self.word_mask)

    def truncate(self, max_len):
        if len(self.tokens) <= max_len:
            return self
        bounds = [(a, min(b, max_len)) for a, b in self.sentence_bounds if a < max_len]
        return SerializedDoc(self.tokens[:max_len], self.word_mask[:max_len], bounds)


def concat_document(sequences: Sequence[Sequence[Token]]) -> SerializedDoc:
    """Concatenate serialized sentences (in order) into one document stream."""
    if not sequences:
        raise EmptyDocument("document has no sentences")
    tokens, bounds = [], []
    for seq in sequences:
        start = len(tokens)
        tokens.extend(seq)
        bounds.append((start, len(tokens)))
    if not tokens:
        raise EmptyDocument("document has no tokens")
    return SerializedDoc(tokens, [t.is_word for t in tokens], bounds)


def serialize_trees(trees: Sequence[ParseTree], drop_root: bool = True) -> SerializedDoc:
    return concat_document([serialize_dfs(t, drop_root) for t in trees])


def serialize_plain(sentences: Sequence[str]) -> SerializedDoc:
    """Word-only stream for documents without parse trees."""
    return concat_document([[Token(w, Kind.WORD) for w in s.split()] for s in sentences])


def strip_symbols(doc: SerializedDoc) -> SerializedDoc:
    seqs = [[t for t in doc.tokens[a:b] if t.is_word] for a, b in doc.sentence_bounds]
    return concat_document(seqs)


class Vocab:
    """Joint word + parsing-symbol vocabulary with dense ids.

    Ids ``0..3`` are the specials, followed by every parsing symbol, followed
    by the kept words.
    """

    def __init__(self, words: Iterable[str] = (), symbols: Iterable[str] = ()):
        self.id_to_word: list[str] = list(SPECIALS)
        self.word_to_id: dict[str, int] = {w: i for i, w in enumerate(SPECIALS)}
        self.symbols: set[str] = set()
        for s in symbols:
            self._add(s)
            self.symbols.add(s)
        for w in words:
            self._add(w)

    def _add(self, w):
        if w not in self.word_to_id:
            self.word_to_id[w] = len(self.id_to_word)
            self.id_to_word.append(w)

    def __len__(self):
        return len(self.id_to_word)

    def __contains__(self, w):
        return w in self.word_to_id

    def id(self, w):
        return self.word_to_id.get(w, UNK_ID)

    def symbol_ids(self):
        return sorted(self.word_to_id[s] for s in self.symbols)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.id_to_word == other.id_to_word and self.symbols == other.symbols

    def __repr__(self):
        return f"Vocab(size={len(self)}, symbols={len(self.symbols)})"


def build_vocab(corpus: Iterable[SerializedDoc], max_words: int) -> Vocab:
    """Keep the ``max_words`` most frequent words; symbols are always kept.

    Frequency ties are broken by first occurrence in the corpus.
    """
    counts: Counter[str] = Counter()
    first: dict[str, int] = {}
    symbols: dict[str, None] = {}
    for doc in corpus:
        for tok in doc.tokens:
            if tok.is_word:
                counts[tok.text] += 1
                first.setdefault(tok.text, len(first))
            else:
                symbols.setdefault(tok.text)
    ranked = sorted(counts, key=lambda w: (-counts[w], first[w]))
    kept = [w for w in ranked if w not in symbols and w not in SPECIALS][:max(max_words, 0)]
    return Vocab(words=kept, symbols=symbols)


@dataclass
class ExtendedVocab:
    """Vocabulary plus the per-document OOV words, in first-occurrence order."""

    base: Vocab
    oovs: list[str]

    def __len__(self):
        return len(self.base) + len(self.oovs)

    def id(self, w):
        if w in self.base:
            return self.base.word_to_id[w]
        try:
            return len(self.base) + self.oovs.index(w)
        except ValueError:
            return UNK_ID

    def word(self, i):
        if i < len(self.base):
            return self.base.id_to_word[i]
        return self.oovs[i - len(self.base)]


def encode_extended(doc: SerializedDoc, vocab: Vocab) -> tuple[list[int], ExtendedVocab]:
    """Map tokens to ids, giving each distinct OOV word its own extension id.

    Symbols are always in the vocabulary, so only word positions can receive
    extension ids.
    """
    ids, oovs, seen = [], [], {}
    V = len(vocab)
    for tok in doc.tokens:
        if tok.text in vocab:
            ids.append(vocab.word_to_id[tok.text])
        elif tok.is_word:
            if tok.text not in seen:
                seen[tok.text] = V + len(oovs)
                oovs.append(tok.text)
            ids.append(seen[tok.text])
        else:
            # symbols missing from a vocab built on another corpus
            ids.append(UNK_ID)
    return ids, ExtendedVocab(vocab, oovs)
