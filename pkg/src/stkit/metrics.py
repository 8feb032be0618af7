"""Corpus-level BLEU and WER.

Pinned definitions (for reproducibility):

BLEU: corpus-pooled modified n-gram precisions for n = 1..4, geometric mean
times the brevity penalty, scaled to 0-100. Tokenization splits punctuation
characters into their own tokens, then splits on whitespace. Orders whose
total n-gram count is zero (corpus shorter than n) are excluded from the
mean; for n > 1 a zero match count is add-one smoothed to
(0 + 1) / (total + 1). A zero 1-gram match count yields exactly 0.0.

WER: 100 * (total word-level Levenshtein edits) / (total reference words),
pooled over the corpus; words are whitespace tokens.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UsageError

_PUNCT = re.compile(r"([^\w\s])")
BLEU_ORDER = 4


def bleu_tokenize(text: str) -> list:
    return _PUNCT.sub(r" \1 ", text).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus BLEU-4 in [0, 100] under the pinned definition above."""
    if len(hypotheses) != len(references):
        raise UsageError(f"bleu: {len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise UsageError("bleu: empty corpus")
    matches = [0] * (BLEU_ORDER + 1)
    totals = [0] * (BLEU_ORDER + 1)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = bleu_tokenize(hyp)
        r = bleu_tokenize(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, BLEU_ORDER + 1):
            counts = _ngrams(h, n)
            limits = _ngrams(r, n)
            totals[n] += max(0, len(h) - n + 1)
            matches[n] += sum(min(c, limits[g]) for g, c in counts.items())
    if hyp_len == 0:
        return 0.0
    log_sum, used = 0.0, 0
    for n in range(1, BLEU_ORDER + 1):
        if totals[n] == 0:
            continue
        if n == 1:
            if matches[1] == 0:
                return 0.0
            p = matches[1] / totals[1]
        elif matches[n] == 0:
            p = 1.0 / (totals[n] + 1)
        else:
            p = matches[n] / totals[n]
        log_sum += math.log(p)
        used += 1
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_sum / used)


def _edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


def wer(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus WER in percent (may exceed 100)."""
    if len(hypotheses) != len(references):
        raise UsageError(f"wer: {len(hypotheses)} hypotheses vs {len(references)} references")
    edits = words = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = hyp.split(), ref.split()
        edits += _edit_distance(h, r)
        words += len(r)
    if words == 0:
        raise UsageError("wer: reference corpus has no words")
    return 100.0 * edits / words


@dataclass
class EvalReport:
    """Per-direction scores plus sample counts, printable as a table."""

    metric: str
    scores: dict = field(default_factory=dict)   # direction -> score
    counts: dict = field(default_factory=dict)   # direction -> n samples

    def average(self) -> float:
        return sum(self.scores.values()) / len(self.scores)

    def format_table(self, label: str = "model") -> str:
        """Directions as columns with the average last."""
        directions = list(self.scores)
        header = [""] + directions + ["Ave."]
        row = [label] + [f"{self.scores[d]:.2f}" for d in directions] \
            + [f"{self.average():.2f}"]
        widths = [max(len(header[i]), len(row[i])) for i in range(len(header))]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths)),
                 "  ".join(c.rjust(w) for c, w in zip(row, widths))]
        return "\n".join(lines)
