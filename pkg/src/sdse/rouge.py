"""Full-length ROUGE-1/2/L F1.

Text is lowercased and split on whitespace; there is no stemming or
stopword removal, so scores are self-consistent but can differ slightly from
the official Perl script.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    empty: bool = False


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def tokenize(text) -> list[str]:
    if isinstance(text, str):
        return text.lower().split()
    return [w.lower() for w in text]


def ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def rouge_n(candidate, reference, n: int = 1) -> RougeScore:
    """Clipped n-gram overlap. Empty n-gram sets give a zero score flagged ``empty``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = ngrams(tokenize(candidate), n), ngrams(tokenize(reference), n)
    nc, nr = sum(cand.values()), sum(ref.values())
    if nc == 0 or nr == 0:
        return RougeScore(0.0, 0.0, 0.0, empty=True)
    overlap = sum((cand & ref).values())
    p, r = overlap / nc, overlap / nr
    return RougeScore(p, r, _f1(p, r))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, O(len(a) * len(b)) with two rows."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> RougeScore:
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0, empty=True)
    lcs = lcs_length(cand, ref)
    p, r = lcs / len(cand), lcs / len(ref)
    return RougeScore(p, r, _f1(p, r))


METRICS = {
    "rouge-1": lambda c, r: rouge_n(c, r, 1),
    "rouge-2": lambda c, r: rouge_n(c, r, 2),
    "rouge-l": rouge_l,
}


def corpus_rouge(pairs) -> dict[str, RougeScore]:
    """Average precision, recall and F1 of each metric over ``(candidate, reference)`` pairs."""
    pairs = list(pairs)
    out = {}
    for name, fn in METRICS.items():
        scores = [fn(c, r) for c, r in pairs]
        k = max(len(scores), 1)
        out[name] = RougeScore(sum(s.precision for s in scores) / k,
                               sum(s.recall for s in scores) / k,
                               sum(s.f1 for s in scores) / k)
    return out
