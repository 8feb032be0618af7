"""Training objectives: smoothed CE, cross-attentive regularization,
online distillation, denoising corruption, and masked-contrastive loss.

The cross-attentive term pulls attention-based reconstructions of the
speech branch toward gradient-stopped reconstructions of the text branch;
the distillation term is a token-mean KL with the text branch as a
detached teacher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError, UsageError
from .tensor import Tensor


@dataclass
class ObjectiveConfig:
    label_smoothing: float = 0.1
    car_weight: float = 0.02
    kd_weight: float = 0.8
    car_temperature: float = 1.0
    contrastive_temperature: float = 0.1
    n_distractors: int = 5
    mask_ratio: float = 0.3
    span_length: int = 3
    permute_sentences: bool = False

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.car_weight < 0 or self.kd_weight < 0 or self.kd_weight > 1:
            raise ConfigError("car_weight must be >= 0 and kd_weight in [0, 1]")
        if self.car_temperature <= 0 or self.contrastive_temperature <= 0:
            raise ConfigError("temperatures must be positive")
        if self.n_distractors < 1:
            raise ConfigError("n_distractors must be >= 1")


def label_smoothed_ce(logits: Tensor, targets, epsilon: float = 0.0,
                      pad_mask=None) -> Tensor:
    """Mean over non-pad tokens of the smoothed negative log-likelihood.

    Per position: (1 - eps) * (-log p[target]) + eps * mean_v(-log p_v).
    With eps = 0 this is plain cross-entropy.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"logits {logits.shape} do not align with targets {targets.shape}")
    vocab = logits.shape[-1]
    if (targets < 0).any() or (targets >= vocab).any():
        raise DataError(f"target id out of range [0, {vocab})")
    if pad_mask is None:
        pad_mask = np.zeros(targets.shape, dtype=bool)
    else:
        pad_mask = np.asarray(pad_mask, dtype=bool)
    n_tokens = int((~pad_mask).sum())
    if n_tokens == 0:
        raise UsageError("label_smoothed_ce: every position is padded")
    weight = (~pad_mask).astype(np.float64) / n_tokens
    logp = T.log_softmax(logits)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    nll = T.neg(T.sum_(T.mul(logp, onehot * weight[..., None])))
    if epsilon == 0.0:
        return nll
    smooth = T.neg(T.sum_(T.mul(logp, weight[..., None] / vocab)))
    return T.add(T.mul(nll, 1.0 - epsilon), T.mul(smooth, epsilon))


def _l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = T.sqrt(T.add(T.sum_(T.mul(x, x), axis=-1, keepdims=True), eps))
    return T.div(x, norm)


def car_loss(text_states: Tensor, speech_states: Tensor, temperature: float = 1.0) -> Tensor:
    """Cross-attentive regularization between text [m,d] and speech [n,d] states.

    With row-normalized states Tn (detached) and Sn:
        A_self  = softmax(Tn Tn^T / tau),  R_self  = A_self Tn   (all detached)
        A_cross = softmax(Tn Sn^T / tau),  R_cross = A_cross Sn
        loss    = ||R_cross - R_self||^2 / (m * d)
    Gradients flow only into the speech branch.
    """
    if text_states.shape[-1] != speech_states.shape[-1]:
        raise DimensionError(f"state width mismatch: text {text_states.shape} "
                             f"vs speech {speech_states.shape}")
    if text_states.size == 0 or speech_states.size == 0:
        raise UsageError("car_loss: empty state sequence")
    m, d = text_states.shape
    tn = T.stop_gradient(_l2_normalize(text_states))
    sn = _l2_normalize(speech_states)
    with T.no_grad():
        a_self = T.softmax(T.mul(T.matmul(tn, T.swapaxes(tn, 0, 1)), 1.0 / temperature))
        r_self = T.matmul(a_self, tn)
    a_cross = T.softmax(T.mul(T.matmul(tn, T.swapaxes(sn, 0, 1)), 1.0 / temperature))
    r_cross = T.matmul(a_cross, sn)
    diff = T.sub(r_cross, T.stop_gradient(r_self))
    return T.mul(T.sum_(T.mul(diff, diff)), 1.0 / (m * d))


def online_kd_loss(text_logits: Tensor, speech_logits: Tensor, pad_mask=None) -> Tensor:
    """Token-mean KL(teacher || student); the text branch teacher is detached."""
    if text_logits.shape != speech_logits.shape:
        raise DimensionError(f"logit shapes differ: text {text_logits.shape} "
                             f"vs speech {speech_logits.shape}")
    if pad_mask is None:
        pad_mask = np.zeros(text_logits.shape[:-1], dtype=bool)
    else:
        pad_mask = np.asarray(pad_mask, dtype=bool)
    n_tokens = int((~pad_mask).sum())
    if n_tokens == 0:
        raise UsageError("online_kd_loss: every position is padded")
    weight = (~pad_mask).astype(np.float64) / n_tokens
    with T.no_grad():
        teacher_logp = T.log_softmax(Tensor(text_logits.data))
    teacher_p = np.exp(teacher_logp.data)
    student_logp = T.log_softmax(speech_logits)
    point = T.mul(T.sub(teacher_logp, student_logp), teacher_p)
    return T.sum_(T.mul(point, weight[..., None]))


def dae_corrupt(tokens: Sequence, mask_ratio: float, span_length: int,
                permute_sentences: bool, seed: int, mask_value,
                sentence_end=None) -> tuple:
    """Span-mask (and optionally sentence-permute) a token sequence.

    Contiguous spans of `span_length` are masked until at least
    `mask_ratio` of the tokens are covered; every span collapses to a
    single `mask_value`. Returns (noisy, original). Deterministic per seed.
    """
    original = list(tokens)
    if not original:
        raise UsageError("dae_corrupt: empty token sequence")
    rng = np.random.default_rng(seed)
    toks = list(original)

    if permute_sentences and sentence_end is not None:
        sentences, cur = [], []
        for t in toks:
            cur.append(t)
            if t == sentence_end:
                sentences.append(cur)
                cur = []
        if cur:
            sentences.append(cur)
        order = rng.permutation(len(sentences))
        toks = [t for i in order for t in sentences[i]]

    n = len(toks)
    target = math.ceil(mask_ratio * n)
    masked = np.zeros(n, dtype=bool)
    span_start = np.zeros(n, dtype=bool)
    while masked.sum() < target:
        starts = [s for s in range(n - span_length + 1)
                  if not masked[s:s + span_length].any()] if span_length <= n else []
        if starts:
            s = int(starts[rng.integers(len(starts))])
            length = span_length
        else:
            free = np.flatnonzero(~masked)
            s = int(free[rng.integers(len(free))])
            length = 1
            while length < span_length and s + length < n and not masked[s + length]:
                length += 1
        masked[s:s + length] = True
        span_start[s] = True

    noisy = []
    for i, t in enumerate(toks):
        if span_start[i]:
            noisy.append(mask_value)
        elif not masked[i]:
            noisy.append(t)
    return noisy, original


def contrastive_speech_loss(context: Tensor, targets: Tensor, masked_idx,
                            n_distractors: int, temperature: float,
                            seed: int) -> Tensor:
    """Masked-frame contrastive loss over cosine similarities.

    For each masked frame t the positive is targets[t]; `n_distractors`
    frames are drawn (seeded) from the other masked positions, topped up
    from unmasked frames when too few exist. score(a, b) = cos(a, b) / tau.
    """
    masked_idx = np.asarray(masked_idx, dtype=np.int64)
    if masked_idx.size == 0:
        raise UsageError("contrastive_speech_loss: no masked positions")
    frames = context.shape[0]
    if context.shape != targets.shape:
        raise DimensionError(f"context {context.shape} vs targets {targets.shape}")
    if frames < n_distractors + 1:
        raise DataError(f"need at least {n_distractors + 1} frames to sample "
                        f"{n_distractors} distractors, got {frames}")
    rng = np.random.default_rng(seed)
    cn = _l2_normalize(T.take_rows(context, masked_idx))
    zn = _l2_normalize(targets)
    scores = T.mul(T.matmul(cn, T.swapaxes(zn, 0, 1)), 1.0 / temperature)  # [M, T]

    candidates = np.zeros((masked_idx.size, n_distractors + 1), dtype=np.int64)
    all_frames = np.arange(frames)
    masked_set = set(int(i) for i in masked_idx)
    for row, t in enumerate(masked_idx):
        pool = [i for i in masked_idx if i != t]
        if len(pool) < n_distractors:
            extra = [i for i in all_frames if i != t and int(i) not in masked_set]
            pool = pool + extra
        pick = rng.choice(len(pool), size=n_distractors, replace=False)
        candidates[row, 0] = t
        candidates[row, 1:] = np.asarray(pool, dtype=np.int64)[pick]

    gathered = T.take_along_last(scores, candidates)
    logp = T.log_softmax(gathered)
    first = np.zeros(gathered.shape)
    first[:, 0] = 1.0 / masked_idx.size
    return T.neg(T.sum_(T.mul(logp, first)))


def joint_loss(speech_ce, text_ce, car, kd, cfg: ObjectiveConfig) -> Tensor:
    """total = (1 - kd_w) * speech_ce + kd_w * kd + text_ce + car_w * car."""
    speech_ce, text_ce = T.as_tensor(speech_ce), T.as_tensor(text_ce)
    car, kd = T.as_tensor(car), T.as_tensor(kd)
    total = T.mul(speech_ce, 1.0 - cfg.kd_weight)
    total = T.add(total, T.mul(kd, cfg.kd_weight))
    total = T.add(total, text_ce)
    return T.add(total, T.mul(car, cfg.car_weight))
