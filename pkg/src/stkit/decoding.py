"""Beam search with a forced language-id first token, plus model ensembling.

Ensembles average per-model log-softmax outputs; the per-entry summands are
sorted by value before accumulation so the result is exactly invariant to
model order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import SampleManifest, WaveformStore
from .errors import ConfigError, StkitError, UsageError
from .model import JointModel
from .vocab import Vocabulary


@dataclass
class Hypothesis:
    tokens: list                 # begins with the forced LID token
    score: float = 0.0           # sum of log-probs of generated tokens
    finished: bool = False

    def penalized(self, alpha: float) -> float:
        steps = max(len(self.tokens) - 1, 1)
        return self.score / (steps ** alpha)


def _check_models(models: Sequence[JointModel], vocab: Vocabulary) -> None:
    if not models:
        raise UsageError("beam_search needs at least one model")
    sizes = {m.config.vocab_size for m in models}
    langs = {m.config.n_languages for m in models}
    if len(sizes) != 1 or len(langs) != 1:
        raise ConfigError(f"ensemble models disagree on vocabulary: sizes {sorted(sizes)}, "
                          f"languages {sorted(langs)}")
    if sizes != {len(vocab)} or langs != {len(vocab.languages)}:
        raise ConfigError(f"models built for vocab size {sorted(sizes)} cannot decode with a "
                          f"vocabulary of {len(vocab)} symbols")


def ensemble_logprobs(models: Sequence[JointModel], encoded: Sequence[tuple],
                      prefixes: np.ndarray) -> np.ndarray:
    """Mean over models of next-token log-probs for each prefix row.

    `encoded[i]` is (states, pad) from models[i] on the same input. Returns
    [n_prefixes, V].
    """
    per_model = []
    for model, (states, pad) in zip(models, encoded):
        b = prefixes.shape[0]
        if states.shape[0] != b:
            reps = (b,) + (1,) * (states.ndim - 1)
            states = T.Tensor(np.tile(states.data, reps))
            pad = None if pad is None else np.tile(pad, (b, 1))
        logits = model.decode_logits(states, pad, prefixes)
        last = logits.data[:, -1, :]
        shifted = last - last.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        per_model.append(logp)
    stacked = np.stack(per_model)
    return np.sort(stacked, axis=0).sum(axis=0) / len(models)


def beam_search(models: Sequence[JointModel], vocab: Vocabulary, target_lang: str,
                waveform: Optional[np.ndarray] = None,
                text_ids: Optional[Sequence[int]] = None,
                beam: int = 5, max_len: int = 64,
                length_penalty: float = 1.0) -> Hypothesis:
    """Decode one input; the first output token is forced to the target LID.

    Per step, candidate scores are mean per-model log-probs; the final
    hypothesis maximizes score / length^alpha. The effective length cap is
    min(max_len, 4 * encoder_length + 4).
    """
    if beam < 1:
        raise UsageError(f"beam must be >= 1, got {beam}")
    _check_models(models, vocab)
    if (waveform is None) == (text_ids is None):
        raise UsageError("provide exactly one of waveform or text_ids")

    with T.no_grad():
        encoded = []
        for m in models:
            if waveform is not None:
                states, pad = m.encode_speech([np.asarray(waveform, dtype=np.float64)])
            else:
                states, pad = m.encode_text([list(text_ids)])
            encoded.append((states, pad))
        enc_len = encoded[0][0].shape[1]
        limit = min(max_len, 4 * enc_len + 4)

        lid = vocab.lid_id(target_lang)
        eos = vocab.eos_id
        live = [Hypothesis(tokens=[lid])]
        done: list[Hypothesis] = []
        for _ in range(limit):
            prefixes = np.array([h.tokens for h in live], dtype=np.int64)
            logp = ensemble_logprobs(models, encoded, prefixes)  # [n_live, V]
            flat = (np.array([h.score for h in live])[:, None] + logp).reshape(-1)
            order = np.argsort(-flat, kind="stable")[:2 * beam]
            next_live: list[Hypothesis] = []
            # eos may only finalize from the top-beam ranks; this keeps
            # beam=1 identical to greedy argmax decoding.
            for rank, idx in enumerate(order):
                hyp = live[idx // logp.shape[1]]
                token = int(idx % logp.shape[1])
                cand = Hypothesis(tokens=hyp.tokens + [token], score=float(flat[idx]))
                if token == eos:
                    if rank < beam:
                        cand.finished = True
                        done.append(cand)
                elif len(next_live) < beam:
                    next_live.append(cand)
            live = next_live
            if len(done) >= beam or not live:
                break
        pool = done if done else live
        return max(pool, key=lambda h: h.penalized(length_penalty))


def decode_corpus(models: Sequence[JointModel], samples: Sequence[SampleManifest],
                  vocab: Vocabulary, store: WaveformStore,
                  target_lang: Optional[str] = None, beam: int = 5,
                  max_len: int = 64, length_penalty: float = 1.0) -> tuple:
    """Decode every sample; returns (id -> text ordered by id, id -> error).

    With target_lang None each sample decodes in ASR mode, forcing its
    source-language LID (transcription); otherwise the given language's LID
    is forced (translation).
    """
    results: dict[str, str] = {}
    failures: dict[str, str] = {}
    for sample in sorted(samples, key=lambda s: s.id):
        lang = target_lang if target_lang is not None else sample.src_lang
        try:
            wave = store.get(sample)
            hyp = beam_search(models, vocab, lang, waveform=wave, beam=beam,
                              max_len=max_len, length_penalty=length_penalty)
            results[sample.id] = vocab.decode(hyp.tokens)
        except StkitError as err:
            failures[sample.id] = str(err)
    return results, failures


def evaluate(models: Sequence[JointModel], samples: Sequence[SampleManifest],
             vocab: Vocabulary, store: WaveformStore, beam: int = 5,
             metric: str = "bleu", max_len: int = 64) -> "EvalReport":
    """Decode a dev corpus and score per direction (BLEU) or language (WER)."""
    from .metrics import EvalReport, bleu, wer

    if metric not in ("bleu", "wer"):
        raise UsageError(f"metric must be 'bleu' or 'wer', got {metric!r}")
    target = None if metric == "wer" else "per-sample"
    groups: dict[str, list] = {}
    for s in samples:
        key = s.src_lang if metric == "wer" else s.direction
        groups.setdefault(key, []).append(s)
    report = EvalReport(metric=metric.upper())
    for key in sorted(groups):
        members = groups[key]
        hyps, refs = [], []
        for s in sorted(members, key=lambda m: m.id):
            lang = s.src_lang if metric == "wer" else s.tgt_lang
            hyp = beam_search(models, vocab, lang, waveform=store.get(s), beam=beam,
                              max_len=max_len)
            hyps.append(vocab.decode(hyp.tokens))
            refs.append(s.transcript if metric == "wer" else s.translation)
        report.scores[key] = wer(hyps, refs) if metric == "wer" else bleu(hyps, refs)
        report.counts[key] = len(members)
    return report


def write_decode_tsv(results: dict, path) -> None:
    """`id<TAB>text` rows sorted by id."""
    from pathlib import Path
    lines = [f"{sid}\t{results[sid]}" for sid in sorted(results)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_decode_tsv(path) -> dict:
    from pathlib import Path
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for raw in text.splitlines():
        if not raw:
            continue
        sid, _, line = raw.partition("\t")
        out[sid] = line
    return out
