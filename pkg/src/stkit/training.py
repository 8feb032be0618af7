"""Three-stage optimization: modality pretraining, joint multitask training,
speech-only finetuning; plus checkpoint averaging.

All randomness (init, batch order, corruption, distractors) is derived from
the config seed, so a (seed, config, data) triple yields bit-identical
checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import SampleManifest, WaveformStore, make_batches
from .errors import ConfigError, DataError
from .losses import (ObjectiveConfig, car_loss, contrastive_speech_loss,
                     dae_corrupt, joint_loss, label_smoothed_ce, online_kd_loss)
from .model import (Checkpoint, JointModel, JointModelConfig, PRETRAIN_ONLY_PREFIXES,
                    SPEECH_PREFIXES, TEXT_ONLY_PREFIXES, TEXT_PREFIXES,
                    init_from_pretrained, load_checkpoint, save_checkpoint,
                    write_checkpoint)
from .optim import Adam, warmup_inv_sqrt_lr
from .tensor import Tensor
from .vocab import Vocabulary

STAGES = ("pretrain_text", "pretrain_speech", "joint", "finetune")


@dataclass
class TrainConfig:
    stage: str
    epochs: int = 5
    learning_rate: float = 2e-3
    warmup_steps: int = 60
    seed: int = 0
    max_tokens: int = 640
    max_frames: int = 60000
    checkpoint_every: int = 0       # steps between checkpoints; 0 = once per epoch
    keep_last: int = 5
    directions: list = field(default_factory=list)
    parallel_epochs: int = 0        # text pretraining: translation phase after DAE

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.keep_last < 1:
            raise ConfigError(f"keep_last must be >= 1, got {self.keep_last}")

    def check_directions(self, vocab: Vocabulary) -> None:
        for src, tgt in self.directions:
            for lang in (src, tgt):
                if lang not in vocab.languages:
                    raise ConfigError(f"direction {src}-{tgt}: language {lang!r} has no "
                                      f"LID symbol in the vocabulary")


@dataclass
class TrainResult:
    model: JointModel
    checkpoints: list
    log: list

    @property
    def final_checkpoint(self):
        return self.checkpoints[-1] if self.checkpoints else None


class _CheckpointRing:
    """Writes ckpt_<step>.d directories, keeping only the newest `keep`."""

    def __init__(self, out_dir, keep: int, frozen: Sequence[str] = ()):
        self.out_dir = Path(out_dir)
        self.keep = keep
        self.frozen = tuple(frozen)
        self.paths: list[Path] = []

    def save(self, model: JointModel, step: int) -> Path:
        path = self.out_dir / f"ckpt_{step}.d"
        save_checkpoint(model, path, step=step, frozen=self.frozen)
        self.paths.append(path)
        while len(self.paths) > self.keep:
            stale = self.paths.pop(0)
            for f in stale.iterdir():
                f.unlink()
            stale.rmdir()
        return path


def _zero_fill_missing_grads(params) -> None:
    # batches without a text-path sample leave text-only parameters gradless
    for _, p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def _optim_step(opt: Adam, params, base_lr: float, warmup: int) -> None:
    _zero_fill_missing_grads(params)
    opt.learning_rate = warmup_inv_sqrt_lr(opt.step_count + 1, base_lr, warmup)
    opt.step()
    opt.zero_grad()


def _text_rows_to_batches(rows: Sequence[tuple], max_tokens: int, seed: int,
                          epoch: int) -> list:
    """Bucket (row_id, payload, n_tokens) tuples under the token budget."""
    ordered = sorted(rows, key=lambda r: (r[2], r[0]))
    batches, current, cur_len = [], [], 0
    for row in ordered:
        longest = max(cur_len, row[2])
        if current and longest * (len(current) + 1) > max_tokens:
            batches.append(current)
            current, cur_len = [], 0
            longest = row[2]
        current.append(row)
        cur_len = longest
    if current:
        batches.append(current)
    rng = np.random.default_rng((seed, epoch, 0xBA7C))
    rng.shuffle(batches)
    return batches


def _pad_id_rows(rows: Sequence[Sequence[int]], pad_id: int) -> tuple:
    longest = max(len(r) for r in rows)
    out = np.full((len(rows), longest), pad_id, dtype=np.int64)
    pad = np.ones((len(rows), longest), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        pad[i, :len(r)] = False
    return out, pad


def _seq2seq_ce(model: JointModel, src_rows, tgt_rows, vocab: Vocabulary,
                epsilon: float, use_text_encoder: bool = True):
    enc, enc_pad = model.encode_text(src_rows, pad_id=vocab.pad_id)
    dec_in, dec_pad = _pad_id_rows([r[:-1] for r in tgt_rows], vocab.pad_id)
    labels, label_pad = _pad_id_rows([r[1:] for r in tgt_rows], vocab.pad_id)
    logits = model.decode_logits(enc, enc_pad, dec_in, dec_pad)
    return label_smoothed_ce(logits, labels, epsilon, pad_mask=label_pad)


def pretrain_text(cfg: TrainConfig, model_cfg: JointModelConfig, vocab: Vocabulary,
                  corpus: Sequence[tuple], out_dir,
                  parallel: Optional[Sequence[tuple]] = None,
                  objectives: ObjectiveConfig = ObjectiveConfig()) -> TrainResult:
    """Denoising-autoencoder pretraining of the text encoder and decoder.

    `corpus` holds (lang, text) monolingual lines; optional `parallel`
    holds (src_lang, tgt_lang, src_text, tgt_text) pairs trained as
    translation for `cfg.parallel_epochs` after the DAE epochs.
    """
    if not corpus:
        raise DataError("text pretraining corpus is empty")
    for lang, _ in corpus:
        if lang not in vocab.languages:
            raise ConfigError(f"corpus language {lang!r} has no LID symbol")
    model = JointModel(model_cfg, seed=cfg.seed)
    params = model.parameters(include_prefixes=TEXT_PREFIXES)
    opt = Adam(params, learning_rate=cfg.learning_rate)
    ring = _CheckpointRing(out_dir, cfg.keep_last)
    log: list[dict] = []
    period_id = vocab.id_of(".")

    rows = []
    for i, (lang, text) in enumerate(corpus):
        source = vocab.encode(text, lang, side="source")
        target = vocab.encode(text, lang, side="target")
        rows.append((i, (lang, source, target), len(target)))

    step = 0
    for epoch in range(cfg.epochs):
        for batch in _text_rows_to_batches(rows, cfg.max_tokens, cfg.seed, epoch):
            src_rows, tgt_rows = [], []
            for row_id, (lang, source, target), _ in batch:
                body, _ = dae_corrupt(source[:-1], objectives.mask_ratio,
                                      objectives.span_length,
                                      objectives.permute_sentences,
                                      seed=(cfg.seed, 11, epoch, row_id),
                                      mask_value=vocab.mask_id,
                                      sentence_end=period_id)
                src_rows.append(body + [vocab.eos_id])
                tgt_rows.append(target)
            loss = _seq2seq_ce(model, src_rows, tgt_rows, vocab, objectives.label_smoothing)
            T.backward(loss)
            _optim_step(opt, params, cfg.learning_rate, cfg.warmup_steps)
            step += 1
            log.append({"step": step, "epoch": epoch, "phase": "dae", "loss": loss.item()})
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                ring.save(model, step)
        if not cfg.checkpoint_every:
            ring.save(model, step)

    if parallel:
        prows = []
        for i, (src_lang, tgt_lang, src_text, tgt_text) in enumerate(parallel):
            source = vocab.encode(src_text, src_lang, side="source")
            target = vocab.encode(tgt_text, tgt_lang, side="target")
            prows.append((i, (source, target), max(len(source), len(target))))
        for epoch in range(cfg.parallel_epochs):
            for batch in _text_rows_to_batches(prows, cfg.max_tokens, cfg.seed, 1000 + epoch):
                src_rows = [payload[0] for _, payload, _ in batch]
                tgt_rows = [payload[1] for _, payload, _ in batch]
                loss = _seq2seq_ce(model, src_rows, tgt_rows, vocab,
                                   objectives.label_smoothing)
                T.backward(loss)
                _optim_step(opt, params, cfg.learning_rate, cfg.warmup_steps)
                step += 1
                log.append({"step": step, "epoch": epoch, "phase": "parallel",
                            "loss": loss.item()})
            if not cfg.checkpoint_every:
                ring.save(model, step)

    if not ring.paths:
        ring.save(model, step)
    return TrainResult(model=model, checkpoints=list(ring.paths), log=log)


def _sample_frame_spans(n_frames: int, mask_ratio: float, span_length: int, rng) -> np.ndarray:
    """Contiguous-span boolean mask over n_frames covering >= mask_ratio."""
    masked = np.zeros(n_frames, dtype=bool)
    target = int(np.ceil(mask_ratio * n_frames))
    guard = 0
    while masked.sum() < target and guard < 10 * n_frames:
        start = int(rng.integers(0, max(n_frames - span_length + 1, 1)))
        masked[start:start + span_length] = True
        guard += 1
    return masked


def pretrain_speech(cfg: TrainConfig, model_cfg: JointModelConfig, vocab: Vocabulary,
                    samples: Sequence[SampleManifest], store: WaveformStore, out_dir,
                    objectives: ObjectiveConfig = ObjectiveConfig()) -> TrainResult:
    """Masked-contrastive pretraining of the front end and bottom layers."""
    model = JointModel(model_cfg, seed=cfg.seed)
    min_len = model.min_waveform_length()
    usable = [s for s in samples if s.n_samples >= min_len]
    if not usable:
        raise DataError(f"no waveform reaches the front end's minimum of {min_len} samples")
    params = model.parameters(include_prefixes=SPEECH_PREFIXES)
    opt = Adam(params, learning_rate=cfg.learning_rate)
    ring = _CheckpointRing(out_dir, cfg.keep_last)
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in make_batches(usable, cfg.max_tokens, cfg.max_frames,
                                  seed=cfg.seed, epoch=epoch):
            waves = [store.get(s) for s in batch]
            frame_lens = model.frontend_lengths([len(w) for w in waves])
            rng = np.random.default_rng((cfg.seed, 13, step))
            frame_mask = np.zeros((len(waves), int(frame_lens.max())), dtype=bool)
            for i, n in enumerate(frame_lens):
                frame_mask[i, :n] = _sample_frame_spans(int(n), objectives.mask_ratio,
                                                        objectives.span_length, rng)
            context, latents, _ = model.speech_pretrain_forward(waves, frame_mask)
            losses = []
            for i, n in enumerate(frame_lens):
                idx = np.flatnonzero(frame_mask[i, :n])
                if idx.size == 0:
                    continue
                ctx_i = T.take_rows(context, i)
                lat_i = T.take_rows(latents, i)
                losses.append(contrastive_speech_loss(
                    ctx_i, lat_i, idx,
                    n_distractors=min(objectives.n_distractors, int(n) - 1),
                    temperature=objectives.contrastive_temperature,
                    seed=(cfg.seed, 14, step, i)))
            if not losses:
                continue
            total = losses[0]
            for extra in losses[1:]:
                total = T.add(total, extra)
            total = T.mul(total, 1.0 / len(losses))
            T.backward(total)
            _optim_step(opt, params, cfg.learning_rate, cfg.warmup_steps)
            step += 1
            log.append({"step": step, "epoch": epoch, "loss": total.item()})
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                ring.save(model, step)
        if not cfg.checkpoint_every:
            ring.save(model, step)
    return TrainResult(model=model, checkpoints=list(ring.paths), log=log)


def _target_ids(sample: SampleManifest, vocab: Vocabulary) -> list:
    text = sample.transcript if sample.is_asr else sample.translation
    return vocab.encode(text, sample.tgt_lang, side="target")


def _joint_batch_loss(model: JointModel, batch: Sequence[SampleManifest],
                      vocab: Vocabulary, store: WaveformStore,
                      objectives: ObjectiveConfig, speech_only: bool):
    """Forward one batch; returns (loss tensor, component log entry)."""
    waves = [store.get(s) for s in batch]
    tgt_rows = [_target_ids(s, vocab) for s in batch]
    dec_in, dec_pad = _pad_id_rows([r[:-1] for r in tgt_rows], vocab.pad_id)
    labels, label_pad = _pad_id_rows([r[1:] for r in tgt_rows], vocab.pad_id)

    enc_speech, speech_pad = model.encode_speech(waves)
    speech_logits = model.decode_logits(enc_speech, speech_pad, dec_in, dec_pad)
    speech_ce = label_smoothed_ce(speech_logits, labels, objectives.label_smoothing,
                                  pad_mask=label_pad)

    st_rows = [i for i, s in enumerate(batch) if not s.is_asr]
    if speech_only or not st_rows:
        total = speech_ce if speech_only else joint_loss(
            speech_ce, Tensor(0.0), Tensor(0.0), Tensor(0.0), objectives)
        entry = {"loss": total.item(), "speech_ce": speech_ce.item(),
                 "text_ce": 0.0, "car": 0.0, "kd": 0.0}
        return total, entry

    idx = np.asarray(st_rows, dtype=np.int64)
    src_rows = [vocab.encode(batch[i].transcript, batch[i].src_lang, side="source")
                for i in st_rows]
    enc_text, text_pad = model.encode_text(src_rows, pad_id=vocab.pad_id)
    text_logits = model.decode_logits(enc_text, text_pad, dec_in[idx], dec_pad[idx])
    text_ce = label_smoothed_ce(text_logits, labels[idx], objectives.label_smoothing,
                                pad_mask=label_pad[idx])
    kd = online_kd_loss(text_logits, T.take_rows(speech_logits, idx),
                        pad_mask=label_pad[idx])
    speech_lens = (~speech_pad).sum(axis=1)
    car_terms = []
    for row, i in enumerate(st_rows):
        t_states = T.take_rows(T.take_rows(enc_text, row), np.arange(len(src_rows[row])))
        s_states = T.take_rows(T.take_rows(enc_speech, i), np.arange(int(speech_lens[i])))
        car_terms.append(car_loss(t_states, s_states, objectives.car_temperature))
    car = car_terms[0]
    for extra in car_terms[1:]:
        car = T.add(car, extra)
    car = T.mul(car, 1.0 / len(car_terms))

    total = joint_loss(speech_ce, text_ce, car, kd, objectives)
    entry = {"loss": total.item(), "speech_ce": speech_ce.item(),
             "text_ce": text_ce.item(), "car": car.item(), "kd": kd.item()}
    return total, entry


def _run_speech_text_stage(model: JointModel, params, cfg: TrainConfig,
                           vocab: Vocabulary, samples, store, out_dir,
                           objectives: ObjectiveConfig, speech_only: bool,
                           frozen: Sequence[str] = ()) -> TrainResult:
    for s in samples:
        for lang in (s.src_lang, s.tgt_lang):
            if lang not in vocab.languages:
                raise ConfigError(f"sample {s.id!r}: language {lang!r} has no LID symbol")
    opt = Adam(params, learning_rate=cfg.learning_rate)
    ring = _CheckpointRing(out_dir, cfg.keep_last, frozen=frozen)
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        for batch in make_batches(samples, cfg.max_tokens, cfg.max_frames,
                                  seed=cfg.seed, epoch=epoch):
            loss, entry = _joint_batch_loss(model, batch, vocab, store, objectives,
                                            speech_only=speech_only)
            T.backward(loss)
            _optim_step(opt, params, cfg.learning_rate, cfg.warmup_steps)
            step += 1
            entry.update(step=step, epoch=epoch)
            log.append(entry)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                ring.save(model, step)
        if not cfg.checkpoint_every:
            ring.save(model, step)
    if not ring.paths:
        ring.save(model, step)
    return TrainResult(model=model, checkpoints=list(ring.paths), log=log)


def train_joint(cfg: TrainConfig, model_cfg: JointModelConfig, vocab: Vocabulary,
                samples: Sequence[SampleManifest], store: WaveformStore, out_dir,
                speech_ckpt: Optional[Checkpoint] = None,
                text_ckpt: Optional[Checkpoint] = None,
                objectives: ObjectiveConfig = ObjectiveConfig()) -> TrainResult:
    """Joint speech+text multitask training from (optionally) pretrained parts.

    Every sample needs a transcript; ASR samples (empty translation) train
    the speech path only, with the source LID and the transcript as target.
    Text input comes from the paired transcripts.
    """
    cfg.check_directions(vocab)
    for s in samples:
        if not s.transcript:
            raise DataError(f"sample {s.id!r} has no transcript")
    model = init_from_pretrained(speech_ckpt, text_ckpt, model_cfg, seed=cfg.seed)
    params = model.parameters(exclude_prefixes=PRETRAIN_ONLY_PREFIXES)
    return _run_speech_text_stage(model, params, cfg, vocab, samples, store,
                                  out_dir, objectives, speech_only=False)


def finetune_speech(cfg: TrainConfig, model: JointModel, vocab: Vocabulary,
                    samples: Sequence[SampleManifest], store: WaveformStore,
                    out_dir, objectives: ObjectiveConfig = ObjectiveConfig()) -> TrainResult:
    """Speech-only finetuning: the text encoder is dropped, no text input.

    Text-embedding parameters leave the optimizer and are marked frozen in
    the emitted checkpoints.
    """
    cfg.check_directions(vocab)
    frozen = [name for name, _ in model.parameters(include_prefixes=TEXT_ONLY_PREFIXES)]
    params = model.parameters(exclude_prefixes=TEXT_ONLY_PREFIXES + PRETRAIN_ONLY_PREFIXES)
    return _run_speech_text_stage(model, params, cfg, vocab, samples, store,
                                  out_dir, objectives, speech_only=True,
                                  frozen=frozen)


def average_checkpoints(paths: Sequence) -> Checkpoint:
    """Parameter-wise arithmetic mean; config copied from the newest."""
    if not paths:
        raise ConfigError("average_checkpoints needs at least one path")
    ckpts = [load_checkpoint(p) for p in paths]
    names = list(ckpts[0].params)
    for p, c in zip(paths[1:], ckpts[1:]):
        other = list(c.params)
        if other != names:
            diff = next((a, b) for a, b in zip(names + [None], other + [None]) if a != b)
            raise ConfigError(f"checkpoint {p} parameter names differ: "
                              f"expected {diff[0]!r}, found {diff[1]!r}")
        for n in names:
            if c.params[n].shape != ckpts[0].params[n].shape:
                raise ConfigError(f"checkpoint {p}: parameter {n!r} shape "
                                  f"{c.params[n].shape} != {ckpts[0].params[n].shape}")
    averaged = {}
    for n in names:
        acc = np.zeros(ckpts[0].params[n].shape, dtype=np.float64)
        for c in ckpts:
            acc += c.params[n].astype(np.float64)
        averaged[n] = (acc / len(ckpts)).astype(np.float32)
    newest = max(ckpts, key=lambda c: c.step)
    return Checkpoint(params=averaged, config=dict(newest.config), step=newest.step,
                      frozen=newest.frozen)


def save_averaged(ckpt: Checkpoint, path) -> None:
    write_checkpoint(ckpt.params, ckpt.config, path, step=ckpt.step, frozen=ckpt.frozen)
