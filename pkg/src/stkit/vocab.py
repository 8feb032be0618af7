"""Vocabularies (subword / phoneme / char), language-id symbols, and G2P.

Specials always occupy the lowest ids in fixed order, followed by one
language-id symbol per configured language. Subword segmentation is greedy
pair merging; ties in pair frequency break toward the lexicographically
smallest pair so builds are fully deterministic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, DataError

PAD, BOS, EOS, UNK, MASK = "<pad>", "<bos>", "<eos>", "<unk>", "<mask>"
SPECIALS = (PAD, BOS, EOS, UNK, MASK)
WORD_MARK = "▁"  # marks word-initial subword pieces and the space char
PHONEME_MARK = "_"    # marks word-leading phonemes

MODES = ("subword", "phoneme", "char")


def lid_symbol(lang: str) -> str:
    return f"⟨lid:{lang}⟩"


@dataclass
class G2PTable:
    """Word-to-phonemes mapping for one or more languages.

    Stored phonemes are unmarked; the word-leading marker is applied at
    phonemize time. File format: `#lang:xx` header lines, then
    `word<TAB>ph ph ...` rows belonging to the most recent header.
    """

    entries: dict = field(default_factory=dict)  # (lang, word) -> tuple[str, ...]
    languages: list = field(default_factory=list)

    def add(self, lang: str, word: str, phonemes: Sequence[str]) -> None:
        if lang not in self.languages:
            self.languages.append(lang)
        self.entries[(lang, word)] = tuple(phonemes)

    def lookup(self, lang: str, word: str) -> Optional[tuple]:
        return self.entries.get((lang, word))

    def covers(self, lang: str) -> bool:
        return lang in self.languages

    def phoneme_inventory(self) -> list:
        seen = set()
        for phs in self.entries.values():
            seen.update(phs)
        return sorted(seen)

    def reverse_lookup(self, phonemes: tuple) -> Optional[str]:
        if not hasattr(self, "_reverse"):
            rev = {}
            for (lang, word) in sorted(self.entries):
                rev.setdefault(self.entries[(lang, word)], word)
            self._reverse = rev
        return self._reverse.get(phonemes)

    def save(self, path) -> None:
        lines = []
        for lang in self.languages:
            lines.append(f"#lang:{lang}")
            for (lg, word) in sorted(self.entries):
                if lg == lang:
                    lines.append(f"{word}\t{' '.join(self.entries[(lg, word)])}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "G2PTable":
        table = cls()
        lang = None
        for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#lang:"):
                lang = line[len("#lang:"):].strip()
                if lang not in table.languages:
                    table.languages.append(lang)
                continue
            if lang is None:
                raise DataError(f"{path}:{ln}: word row before any #lang: header")
            if "\t" not in line:
                raise DataError(f"{path}:{ln}: expected word<TAB>phonemes")
            word, phs = line.split("\t", 1)
            table.entries[(lang, word)] = tuple(phs.split())
        return table


def phonemize(text: str, lang: str, table: G2PTable) -> list:
    """Map text to phoneme strings; word-leading phonemes get a '_' prefix.

    Out-of-table words fall back to per-character pseudo-phonemes, so the
    result always has exactly one '_'-marked symbol per input word.
    """
    if not table.covers(lang):
        raise ConfigError(f"G2P table does not cover language {lang!r}")
    out = []
    for word in text.split():
        phonemes = table.lookup(lang, word)
        if phonemes is None:
            phonemes = tuple(word)  # character fallback
        out.append(PHONEME_MARK + phonemes[0])
        out.extend(phonemes[1:])
    return out


class Vocabulary:
    """Bijective symbol<->id map with specials and per-language LID symbols."""

    def __init__(self, symbols: Sequence[str], mode: str, languages: Sequence[str],
                 g2p: Optional[G2PTable] = None):
        if mode not in MODES:
            raise ConfigError(f"unknown vocabulary mode {mode!r}; expected one of {MODES}")
        self.symbols = list(symbols)
        self.mode = mode
        self.languages = list(languages)
        self.g2p = g2p
        self._ids = {s: i for i, s in enumerate(self.symbols)}
        if len(self._ids) != len(self.symbols):
            dup = [s for s, c in Counter(self.symbols).items() if c > 1]
            raise ConfigError(f"duplicate vocabulary symbols: {dup}")
        expected = list(SPECIALS) + [lid_symbol(lg) for lg in self.languages]
        if self.symbols[:len(expected)] != expected:
            raise ConfigError("specials and LID symbols must occupy the lowest ids in fixed order")

    def __len__(self):
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def mask_id(self) -> int:
        return self._ids[MASK]

    def lid_id(self, lang: str) -> int:
        sym = lid_symbol(lang)
        if sym not in self._ids:
            raise ConfigError(f"language {lang!r} has no LID symbol in vocabulary")
        return self._ids[sym]

    def id_of(self, symbol: str) -> int:
        return self._ids.get(symbol, self._ids[UNK])

    def is_special(self, idx: int) -> bool:
        return idx < len(SPECIALS) + len(self.languages)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, mode: str, g2p: Optional[G2PTable] = None) -> "Vocabulary":
        symbols = Path(path).read_text(encoding="utf-8").splitlines()
        languages = []
        for s in symbols[len(SPECIALS):]:
            if s.startswith("⟨lid:") and s.endswith("⟩"):
                languages.append(s[len("⟨lid:"):-1])
            else:
                break
        return cls(symbols, mode, languages, g2p=g2p)

    # -- segmentation ------------------------------------------------------

    def _word_pieces(self, word: str) -> list:
        """Greedy merge of a word's characters using the learned merge ranks."""
        pieces = [WORD_MARK + word[0]] + list(word[1:])
        merges = getattr(self, "merges", {})
        while len(pieces) > 1:
            best_rank, best_i = None, None
            for i in range(len(pieces) - 1):
                rank = merges.get((pieces[i], pieces[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_i = rank, i
            if best_i is None:
                break
            pieces[best_i:best_i + 2] = [pieces[best_i] + pieces[best_i + 1]]
        return pieces

    def tokenize(self, text: str, lang: Optional[str] = None) -> list:
        words = text.split()
        if self.mode == "char":
            return list(WORD_MARK.join(words))
        if self.mode == "subword":
            toks = []
            for w in words:
                toks.extend(self._word_pieces(w))
            return toks
        if self.g2p is None:
            raise ConfigError("phoneme-mode vocabulary has no G2P table attached")
        return phonemize(" ".join(words), lang, self.g2p)

    def encode(self, text: str, lang: str, side: str = "target") -> list:
        """Token ids; target side is [<lid>, tokens..., eos], source side [tokens..., eos]."""
        if side not in ("source", "target"):
            raise ConfigError(f"side must be 'source' or 'target', got {side!r}")
        if lang not in self.languages:
            raise ConfigError(f"language {lang!r} is not configured (have {self.languages})")
        ids = [self.id_of(t) for t in self.tokenize(text, lang)]
        if side == "target":
            return [self.lid_id(lang)] + ids + [self.eos_id]
        return ids + [self.eos_id]

    def decode(self, ids: Iterable[int]) -> str:
        """Strip specials and undo segmentation back to plain text."""
        toks = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= len(self.symbols):
                raise DataError(f"token id {i} out of range [0, {len(self.symbols)})")
            if not self.is_special(i):
                toks.append(self.symbols[i])
        if self.mode == "char":
            return "".join(toks).replace(WORD_MARK, " ").strip()
        if self.mode == "subword":
            return "".join(toks).replace(WORD_MARK, " ").strip()
        # phoneme mode: '_'-marked symbols open a new word
        words: list[list[str]] = []
        for t in toks:
            if t.startswith(PHONEME_MARK):
                words.append([t[len(PHONEME_MARK):]])
            elif words:
                words[-1].append(t)
            else:
                words.append([t])
        rendered = []
        for phs in words:
            word = self.g2p.reverse_lookup(tuple(phs)) if self.g2p is not None else None
            rendered.append(word if word is not None else "".join(phs))
        return " ".join(rendered)


def build_vocab(corpus: Iterable[str], size: int, mode: str,
                languages: Sequence[str], g2p: Optional[G2PTable] = None) -> Vocabulary:
    """Learn a vocabulary from text lines.

    Subword mode grows the symbol set by greedy pair-frequency merges until
    `size` symbols exist (or no pair repeats); char mode takes the corpus
    character inventory; phoneme mode enumerates the G2P table symbols in
    both plain and word-leading variants plus corpus character fallbacks.
    """
    lines = [ln for ln in corpus if ln.strip()]
    if not lines:
        raise DataError("cannot build a vocabulary from an empty corpus")
    reserved = list(SPECIALS) + [lid_symbol(lg) for lg in languages]
    if size <= len(reserved):
        raise ConfigError(f"vocabulary size {size} must exceed the {len(reserved)} reserved symbols")

    if mode == "char":
        chars = sorted({c for ln in lines for c in WORD_MARK.join(ln.split())})
        return Vocabulary(reserved + chars, mode, languages)

    if mode == "phoneme":
        if g2p is None:
            raise ConfigError("phoneme mode requires a G2P table")
        base = []
        for ph in g2p.phoneme_inventory():
            base.extend([PHONEME_MARK + ph, ph])
        fallback_chars = sorted({c for ln in lines for c in ln if not c.isspace()})
        for c in fallback_chars:
            for sym in (PHONEME_MARK + c, c):
                if sym not in base:
                    base.append(sym)
        return Vocabulary(reserved + base, mode, languages, g2p=g2p)

    # subword: start from the character inventory, then merge
    word_freq = Counter()
    for ln in lines:
        word_freq.update(ln.split())
    pieces = {w: [WORD_MARK + w[0]] + list(w[1:]) for w in word_freq}
    base = sorted({p for seq in pieces.values() for p in seq})
    if size < len(reserved) + len(base):
        raise ConfigError(
            f"vocabulary size {size} cannot hold the {len(base)} base characters "
            f"plus {len(reserved)} reserved symbols")
    symbols = reserved + base
    merges: dict = {}
    while len(symbols) < size:
        pair_freq: Counter = Counter()
        for w, seq in pieces.items():
            f = word_freq[w]
            for i in range(len(seq) - 1):
                pair_freq[(seq[i], seq[i + 1])] += f
        if not pair_freq:
            break
        (a, b), count = min(pair_freq.items(), key=lambda kv: (-kv[1], kv[0]))
        if count < 2:
            break
        merged = a + b
        merges[(a, b)] = len(merges)
        symbols.append(merged)
        for w, seq in pieces.items():
            i = 0
            while i < len(seq) - 1:
                if seq[i] == a and seq[i + 1] == b:
                    seq[i:i + 2] = [merged]
                else:
                    i += 1
    vocab = Vocabulary(symbols, mode, languages)
    vocab.merges = merges
    return vocab


# Spec-level operation aliases (free functions over a Vocabulary).

def encode(text: str, lang: str, vocab: Vocabulary, side: str = "target") -> list:
    return vocab.encode(text, lang, side)


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)
