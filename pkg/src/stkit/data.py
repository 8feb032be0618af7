"""Manifests, deterministic synthetic corpora, waveform I/O, and batching.

The synthetic "speech" is a token-to-waveform codebook: each surface token
owns a fixed segment, sentences are segment concatenations plus seeded
low-amplitude noise. Source languages can share part of each concept's
segment so cross-lingual transfer is learnable by a small model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

MANIFEST_COLUMNS = ("id", "audio_path", "n_samples", "sample_rate",
                    "src_lang", "tgt_lang", "transcript", "translation")


@dataclass
class SampleManifest:
    """One audio-transcript-translation record; empty translation = ASR-only."""

    id: str
    audio_path: str
    n_samples: int
    sample_rate: int
    src_lang: str
    tgt_lang: str
    transcript: str
    translation: str = ""

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def is_asr(self) -> bool:
        return self.translation == ""

    @property
    def direction(self) -> str:
        return f"{self.src_lang}-{self.tgt_lang}"


def _check_sample(s: SampleManifest, where: str) -> None:
    if s.n_samples < 0:
        raise DataError(f"{where}: column n_samples: negative value {s.n_samples}")
    if s.sample_rate <= 0:
        raise DataError(f"{where}: column sample_rate: non-positive value {s.sample_rate}")
    if s.translation == "" and s.tgt_lang != s.src_lang:
        raise DataError(f"{where}: ASR sample (empty translation) must have tgt_lang == src_lang, "
                        f"got {s.src_lang!r} -> {s.tgt_lang!r}")


def load_manifest(path) -> list:
    """Read a manifest TSV, validating rows; errors name the line and column."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"{path}:1: missing header")
    header = tuple(lines[0].split("\t"))
    if header != MANIFEST_COLUMNS:
        raise DataError(f"{path}:1: bad header {header}, expected {MANIFEST_COLUMNS}")
    samples = []
    for ln, raw in enumerate(lines[1:], start=2):
        if raw == "":
            continue
        cols = raw.split("\t")
        if len(cols) != len(MANIFEST_COLUMNS):
            raise DataError(f"{path}:{ln}: expected {len(MANIFEST_COLUMNS)} columns, got {len(cols)}")
        try:
            n_samples = int(cols[2])
        except ValueError:
            raise DataError(f"{path}:{ln}: column n_samples: not an integer: {cols[2]!r}")
        try:
            sample_rate = int(cols[3])
        except ValueError:
            raise DataError(f"{path}:{ln}: column sample_rate: not an integer: {cols[3]!r}")
        sample = SampleManifest(cols[0], cols[1], n_samples, sample_rate,
                                cols[4], cols[5], cols[6], cols[7])
        _check_sample(sample, f"{path}:{ln}")
        samples.append(sample)
    return samples


def save_manifest(samples: Iterable[SampleManifest], path) -> None:
    rows = ["\t".join(MANIFEST_COLUMNS)]
    for s in samples:
        fields = (s.id, s.audio_path, str(s.n_samples), str(s.sample_rate),
                  s.src_lang, s.tgt_lang, s.transcript, s.translation)
        for f in fields:
            if "\t" in f or "\n" in f:
                raise DataError(f"manifest field may not contain tab/newline: {f!r}")
        rows.append("\t".join(fields))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# waveform storage: little-endian float32 mono files, or in-memory arrays

def save_waveform(path, wave: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(wave, dtype="<f4").tobytes())


def load_waveform(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").astype(np.float64)


class WaveformStore:
    """Resolves manifest audio paths; `mem:<id>` entries live in memory."""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self.memory: dict[str, np.ndarray] = {}

    def put(self, sample_id: str, wave: np.ndarray) -> str:
        self.memory[sample_id] = np.asarray(wave, dtype=np.float64)
        return f"mem:{sample_id}"

    def get(self, sample: SampleManifest) -> np.ndarray:
        if sample.audio_path.startswith("mem:"):
            key = sample.audio_path[4:]
            if key not in self.memory:
                raise DataError(f"in-memory waveform missing for id {key!r}")
            return self.memory[key]
        path = Path(sample.audio_path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        if not path.exists():
            raise DataError(f"waveform file not found: {path}")
        return load_waveform(path)

    def write_files(self, out_dir, samples: Sequence[SampleManifest]) -> None:
        """Persist in-memory waveforms and point manifests at the files."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for s in samples:
            if s.audio_path.startswith("mem:"):
                key = s.audio_path[4:]
                save_waveform(out_dir / f"{key}.f32", self.memory[key])
                s.audio_path = f"{out_dir.name}/{key}.f32"
        self.root = out_dir.parent


# ---------------------------------------------------------------------------
# synthetic corpus generation

@dataclass
class SynthSpec:
    """Everything needed to regenerate a corpus bit-for-bit from a seed.

    `rewrite_rules[(src, tgt)]` maps every source token to a target token
    (a bijection per direction); `codebook[token]` is that token's fixed
    waveform segment. Directions listed in `zero_shot_directions` emit no
    ST pairs for training; they are still rendered in the dev split so the
    transfer trend is measurable.
    """

    languages: list
    vocab_size: int
    sentence_len: tuple
    rewrite_rules: dict
    codebook: dict
    seed: int
    st_directions: list = field(default_factory=list)
    zero_shot_directions: list = field(default_factory=list)
    asr_languages: list = field(default_factory=list)
    n_train: int = 100
    n_dev: int = 20
    n_asr: int = 100
    sample_rate: int = 800
    noise_amplitude: float = 0.05
    reverse_translation: bool = False  # emit target tokens in reversed order

    def token(self, lang: str, concept: int) -> str:
        return f"{lang}{concept}"


def lang_tokens(lang: str, vocab_size: int) -> list:
    return [f"{lang}{i}" for i in range(vocab_size)]


def default_synth_spec(src_languages: Sequence[str], tgt_languages: Sequence[str],
                       vocab_size: int = 20, sentence_len: tuple = (3, 8),
                       segment_len: int = 40, shared_fraction: float = 0.5,
                       seed: int = 0, **kwargs) -> SynthSpec:
    """Build a SynthSpec with concept-aligned rules and a seeded codebook.

    Concept i of the source maps to each target language's own (seeded)
    rendering of concept i, so every direction - including ones never seen
    in training - composes consistently. Source languages share
    `shared_fraction` of each concept's waveform energy; the rest is
    language-specific.
    """
    languages = list(dict.fromkeys(list(src_languages) + list(tgt_languages)))
    rng = np.random.default_rng((seed, 0xC0DE))

    def segment():
        raw = rng.normal(size=segment_len)
        kernel = np.ones(4) / 4.0
        smooth = np.convolve(raw, kernel, mode="same")
        return smooth / (np.abs(smooth).max() + 1e-9)

    # Each language renders concept c as its surface index render[lang][c];
    # a permutation per language keeps the decoder's mapping nontrivial.
    render = {lang: np.random.default_rng((seed, 0xF00D, li)).permutation(vocab_size)
              for li, lang in enumerate(languages)}
    inverse = {lang: np.argsort(render[lang]) for lang in languages}  # surface -> concept

    base = [segment() for _ in range(vocab_size)]  # indexed by concept
    codebook = {}
    for lang in languages:
        for s in range(vocab_size):
            own = segment()
            concept = inverse[lang][s]
            mixed = shared_fraction * base[concept] + (1.0 - shared_fraction) * own
            codebook[f"{lang}{s}"] = mixed / (np.abs(mixed).max() + 1e-9)

    rules = {}
    for src in src_languages:
        for tgt in languages:
            if src == tgt:
                continue
            rules[(src, tgt)] = {f"{src}{s}": f"{tgt}{render[tgt][inverse[src][s]]}"
                                 for s in range(vocab_size)}

    return SynthSpec(languages=languages, vocab_size=vocab_size,
                     sentence_len=tuple(sentence_len), rewrite_rules=rules,
                     codebook=codebook, seed=seed, **kwargs)


def translate_tokens(tokens: Sequence[str], rule: dict) -> list:
    return [rule[t] for t in tokens]


@dataclass
class SynthCorpus:
    train: list
    dev: list
    store: WaveformStore

    @property
    def all_samples(self) -> list:
        return self.train + self.dev


def generate_corpus(spec: SynthSpec) -> SynthCorpus:
    """Deterministically synthesize manifests plus their waveform store."""
    store = WaveformStore()
    train: list[SampleManifest] = []
    dev: list[SampleManifest] = []
    lo, hi = spec.sentence_len

    def make_sample(split: str, idx: int, src: str, tgt: str, rng, out: list,
                    asr: bool) -> None:
        length = int(rng.integers(lo, hi + 1))
        concepts = rng.integers(0, spec.vocab_size, size=length)
        tokens = [spec.token(src, int(c)) for c in concepts]
        if asr:
            translation = ""
        else:
            rule = spec.rewrite_rules.get((src, tgt))
            if rule is None:
                raise ConfigError(f"no rewrite rule for direction {src}-{tgt}")
            rewritten = translate_tokens(tokens, rule)
            if spec.reverse_translation:
                rewritten = rewritten[::-1]
            translation = " ".join(rewritten)
        wave = np.concatenate([spec.codebook[t] for t in tokens])
        wave = wave + spec.noise_amplitude * rng.normal(size=wave.shape)
        sid = f"{split}-{src}-{tgt}-{idx:05d}" if not asr else f"{split}-asr-{src}-{idx:05d}"
        path = store.put(sid, wave)
        out.append(SampleManifest(sid, path, len(wave), spec.sample_rate, src,
                                  src if asr else tgt, " ".join(tokens), translation))

    for d_i, (src, tgt) in enumerate(spec.st_directions):
        if (src, tgt) not in spec.rewrite_rules:
            raise ConfigError(f"no rewrite rule for direction {src}-{tgt}")
        rng = np.random.default_rng((spec.seed, 1, d_i))
        for i in range(spec.n_train):
            make_sample("train", i, src, tgt, rng, train, asr=False)
        for i in range(spec.n_dev):
            make_sample("dev", i, src, tgt, rng, dev, asr=False)

    for d_i, (src, tgt) in enumerate(spec.zero_shot_directions):
        if (src, tgt) not in spec.rewrite_rules:
            raise ConfigError(f"no rewrite rule for zero-shot direction {src}-{tgt}")
        rng = np.random.default_rng((spec.seed, 2, d_i))
        for i in range(spec.n_dev):
            make_sample("dev", i, src, tgt, rng, dev, asr=False)

    for l_i, lang in enumerate(spec.asr_languages):
        rng = np.random.default_rng((spec.seed, 3, l_i))
        for i in range(spec.n_asr):
            make_sample("train", i, lang, lang, rng, train, asr=True)

    return SynthCorpus(train=train, dev=dev, store=store)


# ---------------------------------------------------------------------------
# batching

def _token_measure(s: SampleManifest) -> int:
    return max(len(s.transcript.split()), len(s.translation.split())) + 2


def make_batches(samples: Sequence[SampleManifest], max_tokens: int, max_frames: int,
                 seed: int, epoch: int = 0) -> list:
    """Length-bucketed batches; batch order is shuffled per (seed, epoch).

    A batch is capped so padded-size products stay within the limits:
    max(frames) * batch_size <= max_frames and max(tokens) * batch_size
    <= max_tokens.
    """
    if max_tokens <= 0 or max_frames <= 0:
        raise ConfigError(f"batch limits must be positive, got max_tokens={max_tokens}, "
                          f"max_frames={max_frames}")
    for s in samples:
        if s.n_samples > max_frames or _token_measure(s) > max_tokens:
            raise DataError(f"sample {s.id!r} exceeds batch limits "
                            f"({s.n_samples} frames, {_token_measure(s)} tokens)")
    ordered = sorted(samples, key=lambda s: (s.n_samples, _token_measure(s), s.id))
    batches: list[list[SampleManifest]] = []
    current: list[SampleManifest] = []
    cur_frames = cur_tokens = 0
    for s in ordered:
        frames = max(cur_frames, s.n_samples)
        tokens = max(cur_tokens, _token_measure(s))
        n = len(current) + 1
        if current and (frames * n > max_frames or tokens * n > max_tokens):
            batches.append(current)
            current, cur_frames, cur_tokens = [], 0, 0
            frames, tokens = s.n_samples, _token_measure(s)
        current.append(s)
        cur_frames, cur_tokens = frames, tokens
    if current:
        batches.append(current)
    rng = np.random.default_rng((seed, epoch))
    rng.shuffle(batches)
    return batches


def pad_waveforms(waves: Sequence[np.ndarray]) -> tuple:
    """Stack 1-D waves into [B, Lmax]; boolean mask is True at padding."""
    longest = max(len(w) for w in waves)
    out = np.zeros((len(waves), longest))
    mask = np.ones((len(waves), longest), dtype=bool)
    for i, w in enumerate(waves):
        out[i, :len(w)] = w
        mask[i, :len(w)] = False
    return out, mask


def pad_token_rows(rows: Sequence[Sequence[int]], pad_id: int) -> tuple:
    """Stack id lists into [B, Tmax] with pad_id; mask is True at padding."""
    longest = max(len(r) for r in rows)
    out = np.full((len(rows), longest), pad_id, dtype=np.int64)
    mask = np.ones((len(rows), longest), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = False
    return out, mask
