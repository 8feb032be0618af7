"""Joint speech-text transformer with a shared top encoder and decoder.

Speech path: conv front end -> bottom transformer layers -> 3-layer stride-2
conv adaptor -> shared encoder layers. Text path: embedding -> the same
shared encoder layers. One decoder serves both paths; the first target token
is always a language-id symbol. Blocks are pre-norm; positions sinusoidal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError, UsageError
from .tensor import Tensor
from .vocab import SPECIALS

ADAPTOR_LAYERS = 3
ADAPTOR_STRIDE = 2


@dataclass
class JointModelConfig:
    vocab_size: int
    n_languages: int
    d_model: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    speech_frontend: tuple = ((16, 8, 4), (32, 4, 2), (64, 4, 2))  # (channels, kernel, stride)
    n_speech_bottom_layers: int = 2
    n_shared_encoder_layers: int = 2
    n_decoder_layers: int = 2
    adaptor_kernel: int = 3
    adaptor_padding: int = 1
    dropout: float = 0.0
    max_positions: int = 1024

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_shared_encoder_layers < 1:
            raise ConfigError("at least one shared encoder layer is required")
        self.speech_frontend = tuple(tuple(int(v) for v in layer) for layer in self.speech_frontend)

    def to_kv(self) -> dict:
        kv = {
            "vocab_size": str(self.vocab_size),
            "n_languages": str(self.n_languages),
            "d_model": str(self.d_model),
            "n_heads": str(self.n_heads),
            "ffn_dim": str(self.ffn_dim),
            "speech_frontend": ",".join(":".join(str(v) for v in layer)
                                        for layer in self.speech_frontend),
            "n_speech_bottom_layers": str(self.n_speech_bottom_layers),
            "n_shared_encoder_layers": str(self.n_shared_encoder_layers),
            "n_decoder_layers": str(self.n_decoder_layers),
            "adaptor_kernel": str(self.adaptor_kernel),
            "adaptor_padding": str(self.adaptor_padding),
            "dropout": str(self.dropout),
            "max_positions": str(self.max_positions),
        }
        return kv

    @classmethod
    def from_kv(cls, kv: dict) -> "JointModelConfig":
        frontend = tuple(tuple(int(v) for v in layer.split(":"))
                         for layer in kv["speech_frontend"].split(","))
        return cls(vocab_size=int(kv["vocab_size"]), n_languages=int(kv["n_languages"]),
                   d_model=int(kv["d_model"]), n_heads=int(kv["n_heads"]),
                   ffn_dim=int(kv["ffn_dim"]), speech_frontend=frontend,
                   n_speech_bottom_layers=int(kv["n_speech_bottom_layers"]),
                   n_shared_encoder_layers=int(kv["n_shared_encoder_layers"]),
                   n_decoder_layers=int(kv["n_decoder_layers"]),
                   adaptor_kernel=int(kv["adaptor_kernel"]),
                   adaptor_padding=int(kv["adaptor_padding"]),
                   dropout=float(kv["dropout"]), max_positions=int(kv["max_positions"]))


def conv_out_len(length, kernel: int, stride: int, padding: int):
    return (length + 2 * padding - kernel) // stride + 1


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    dim = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * dim / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def lid_id_range(n_languages: int) -> tuple:
    lo = len(SPECIALS)
    return lo, lo + n_languages


class _Params:
    """Ordered named-parameter registry."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.tensors: dict[str, Tensor] = {}

    def make(self, name: str, shape: tuple, scale: Optional[float] = None) -> Tensor:
        if scale is None:
            data = np.zeros(shape)
        else:
            data = self.rng.normal(0.0, scale, size=shape)
        t = Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def ones(self, name: str, shape: tuple) -> Tensor:
        t = Tensor(np.ones(shape), requires_grad=True, name=name)
        self.tensors[name] = t
        return t


class Linear:
    def __init__(self, p: _Params, name: str, d_in: int, d_out: int):
        self.w = p.make(f"{name}.w", (d_in, d_out), scale=d_in ** -0.5)
        self.b = p.make(f"{name}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, p: _Params, name: str, d: int):
        self.gamma = p.ones(f"{name}.gamma", (d,))
        self.beta = p.make(f"{name}.beta", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention:
    def __init__(self, p: _Params, name: str, d: int, n_heads: int):
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.wq = Linear(p, f"{name}.q", d, d)
        self.wk = Linear(p, f"{name}.k", d, d)
        self.wv = Linear(p, f"{name}.v", d, d)
        self.wo = Linear(p, f"{name}.out", d, d)

    def __call__(self, query: Tensor, memory: Tensor, mask=None) -> Tensor:
        b, tq, d = query.shape
        tk = memory.shape[1]

        def split(x, t):
            return T.swapaxes(T.reshape(x, (b, t, self.n_heads, self.d_head)), 1, 2)

        q = split(self.wq(query), tq)
        k = split(self.wk(memory), tk)
        v = split(self.wv(memory), tk)
        ctx = T.attention(q, k, v, mask=mask)
        merged = T.reshape(T.swapaxes(ctx, 1, 2), (b, tq, d))
        return self.wo(merged)


class FeedForward:
    def __init__(self, p: _Params, name: str, d: int, ffn_dim: int):
        self.w1 = Linear(p, f"{name}.inner", d, ffn_dim)
        self.w2 = Linear(p, f"{name}.outer", ffn_dim, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(T.gelu(self.w1(x)))


def _dropout(x: Tensor, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.uniform(size=x.shape) >= p) / (1.0 - p)
    return T.mul(x, keep)


class EncoderBlock:
    def __init__(self, p: _Params, name: str, d: int, n_heads: int, ffn_dim: int):
        self.norm1 = LayerNorm(p, f"{name}.norm1", d)
        self.attn = MultiHeadAttention(p, f"{name}.attn", d, n_heads)
        self.norm2 = LayerNorm(p, f"{name}.norm2", d)
        self.ffn = FeedForward(p, f"{name}.ffn", d, ffn_dim)

    def __call__(self, x: Tensor, mask=None, dropout: float = 0.0, rng=None) -> Tensor:
        h = self.norm1(x)
        x = T.add(x, _dropout(self.attn(h, h, mask=mask), dropout, rng))
        return T.add(x, _dropout(self.ffn(self.norm2(x)), dropout, rng))


class DecoderBlock:
    def __init__(self, p: _Params, name: str, d: int, n_heads: int, ffn_dim: int):
        self.norm1 = LayerNorm(p, f"{name}.norm1", d)
        self.self_attn = MultiHeadAttention(p, f"{name}.self", d, n_heads)
        self.norm2 = LayerNorm(p, f"{name}.norm2", d)
        self.cross_attn = MultiHeadAttention(p, f"{name}.cross", d, n_heads)
        self.norm3 = LayerNorm(p, f"{name}.norm3", d)
        self.ffn = FeedForward(p, f"{name}.ffn", d, ffn_dim)

    def __call__(self, x: Tensor, memory: Tensor, self_mask, cross_mask,
                 dropout: float = 0.0, rng=None) -> Tensor:
        h = self.norm1(x)
        x = T.add(x, _dropout(self.self_attn(h, h, mask=self_mask), dropout, rng))
        x = T.add(x, _dropout(self.cross_attn(self.norm2(x), memory, mask=cross_mask),
                              dropout, rng))
        return T.add(x, _dropout(self.ffn(self.norm3(x)), dropout, rng))


# Parameter-name prefixes owned by each pretraining stage.
SPEECH_PREFIXES = ("frontend.", "frontend_proj.", "frontend_norm.", "speech_bottom.",
                   "speech_pretrain.")
TEXT_PREFIXES = ("shared.", "shared_norm.", "text_embed.", "dec_embed.",
                 "decoder.", "decoder_norm.", "out_proj.")
TEXT_ONLY_PREFIXES = ("text_embed.",)  # used by no path once the text encoder is dropped
PRETRAIN_ONLY_PREFIXES = ("speech_pretrain.",)


class JointModel:
    def __init__(self, config: JointModelConfig, seed: int = 0):
        self.config = config
        p = _Params(np.random.default_rng((seed, 0x5EED)))
        self._params = p
        d = config.d_model

        self.frontend = []
        c_in = 1
        for i, (channels, kernel, stride) in enumerate(config.speech_frontend):
            w = p.make(f"frontend.{i}.w", (channels, c_in, kernel), scale=(c_in * kernel) ** -0.5)
            b = p.make(f"frontend.{i}.b", (channels,))
            self.frontend.append((w, b, kernel, stride))
            c_in = channels
        self.frontend_proj = Linear(p, "frontend_proj", c_in, d)
        self.frontend_norm = LayerNorm(p, "frontend_norm", d)

        self.speech_bottom = [EncoderBlock(p, f"speech_bottom.{i}", d, config.n_heads, config.ffn_dim)
                              for i in range(config.n_speech_bottom_layers)]

        self.adaptor = []
        for i in range(ADAPTOR_LAYERS):
            w = p.make(f"adaptor.{i}.w", (d, d, config.adaptor_kernel),
                       scale=(d * config.adaptor_kernel) ** -0.5)
            b = p.make(f"adaptor.{i}.b", (d,))
            self.adaptor.append((w, b))

        self.shared = [EncoderBlock(p, f"shared.{i}", d, config.n_heads, config.ffn_dim)
                       for i in range(config.n_shared_encoder_layers)]
        self.shared_norm = LayerNorm(p, "shared_norm", d)

        self.text_embed = p.make("text_embed.w", (config.vocab_size, d), scale=d ** -0.5)
        self.dec_embed = p.make("dec_embed.w", (config.vocab_size, d), scale=d ** -0.5)
        self.decoder = [DecoderBlock(p, f"decoder.{i}", d, config.n_heads, config.ffn_dim)
                        for i in range(config.n_decoder_layers)]
        self.decoder_norm = LayerNorm(p, "decoder_norm", d)
        self.out_proj = Linear(p, "out_proj", d, config.vocab_size)

        self.mask_emb = p.make("speech_pretrain.mask_emb", (d,), scale=0.1)

        self.positions = sinusoidal_positions(config.max_positions, d)
        self._embed_scale = math.sqrt(d)

    # -- parameter plumbing --------------------------------------------------

    def parameters(self, include_prefixes: Optional[Sequence[str]] = None,
                   exclude_prefixes: Sequence[str] = ()) -> list:
        out = []
        for name, t in self._params.tensors.items():
            if include_prefixes is not None and not name.startswith(tuple(include_prefixes)):
                continue
            if exclude_prefixes and name.startswith(tuple(exclude_prefixes)):
                continue
            out.append((name, t))
        return out

    def param(self, name: str) -> Tensor:
        return self._params.tensors[name]

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    # -- lengths ----------------------------------------------------------

    def frontend_lengths(self, lengths) -> np.ndarray:
        lengths = np.asarray(lengths, dtype=np.int64)
        for _, _, kernel, stride in self.frontend:
            lengths = conv_out_len(lengths, kernel, stride, 0)
        return lengths

    def adaptor_lengths(self, lengths) -> np.ndarray:
        lengths = np.asarray(lengths, dtype=np.int64)
        for _ in range(ADAPTOR_LAYERS):
            lengths = conv_out_len(lengths, self.config.adaptor_kernel, ADAPTOR_STRIDE,
                                   self.config.adaptor_padding)
        return lengths

    def min_waveform_length(self) -> int:
        need = 1
        for _ in range(ADAPTOR_LAYERS):
            need = (need - 1) * ADAPTOR_STRIDE + self.config.adaptor_kernel \
                - 2 * self.config.adaptor_padding
            need = max(need, 1)
        for _, _, kernel, stride in reversed(self.frontend):
            need = (need - 1) * stride + kernel
        return need

    # -- forward passes ----------------------------------------------------

    def _frontend_conv(self, waves: Tensor) -> Tensor:
        x = T.reshape(waves, (waves.shape[0], 1, waves.shape[1]))
        for w, b, kernel, stride in self.frontend:
            x = T.conv1d(x, w, stride=stride, padding=0)
            x = T.add(x, T.reshape(b, (1, b.shape[0], 1)))
            x = T.gelu(x)
        return T.swapaxes(x, 1, 2)  # [B, T, C]

    def _positions(self, t: int) -> np.ndarray:
        if t > self.config.max_positions:
            raise DataError(f"sequence length {t} exceeds max_positions {self.config.max_positions}")
        return self.positions[:t]

    def _run_shared(self, x: Tensor, pad: Optional[np.ndarray], dropout: float, rng) -> Tensor:
        mask = None if pad is None else pad[:, None, None, :]
        for block in self.shared:
            x = block(x, mask=mask, dropout=dropout, rng=rng)
        return self.shared_norm(x)

    def encode_speech(self, waves: Sequence[np.ndarray], train_rng=None,
                      stop_at_bottom: bool = False):
        """Batched speech encoding; returns (states [B,T,d], pad mask [B,T])."""
        lengths = np.array([len(w) for w in waves], dtype=np.int64)
        min_len = self.min_waveform_length()
        if (lengths < min_len).any():
            short = int(lengths.min())
            raise DataError(f"waveform of {short} samples is too short; the front end "
                            f"needs at least {min_len}")
        dropout = self.config.dropout
        longest = int(lengths.max())
        padded = np.zeros((len(waves), longest))
        for i, w in enumerate(waves):
            padded[i, :len(w)] = w
        feats = self._frontend_conv(Tensor(padded))
        frame_lens = self.frontend_lengths(lengths)
        x = self.frontend_norm(self.frontend_proj(feats))
        t_frames = x.shape[1]
        frame_pad = np.arange(t_frames)[None, :] >= frame_lens[:, None]
        x = T.add(x, self._positions(t_frames)[None])
        mask = frame_pad[:, None, None, :]
        for block in self.speech_bottom:
            x = block(x, mask=mask, dropout=dropout, rng=train_rng)
        if stop_at_bottom:
            return x, frame_pad
        x = T.swapaxes(x, 1, 2)  # [B, d, T]
        for w, b in self.adaptor:
            x = T.conv1d(x, w, stride=ADAPTOR_STRIDE, padding=self.config.adaptor_padding)
            x = T.add(x, T.reshape(b, (1, b.shape[0], 1)))
            x = T.gelu(x)
        x = T.swapaxes(x, 1, 2)
        out_lens = self.adaptor_lengths(frame_lens)
        out_pad = np.arange(x.shape[1])[None, :] >= out_lens[:, None]
        return self._run_shared(x, out_pad, dropout, train_rng), out_pad

    def speech_pretrain_forward(self, waves: Sequence[np.ndarray], frame_mask: np.ndarray,
                                train_rng=None):
        """Masked-latent forward for contrastive pretraining.

        `frame_mask` is boolean [B, T_frames]; masked latent frames are
        replaced by the learned mask embedding before the bottom layers.
        Returns (context, latents, frame_pad); targets are the unmasked
        latents.
        """
        lengths = np.array([len(w) for w in waves], dtype=np.int64)
        min_len = self.min_waveform_length()
        if (lengths < min_len).any():
            raise DataError(f"waveform too short; the front end needs at least {min_len} samples")
        longest = int(lengths.max())
        padded = np.zeros((len(waves), longest))
        for i, w in enumerate(waves):
            padded[i, :len(w)] = w
        feats = self._frontend_conv(Tensor(padded))
        latents = self.frontend_norm(self.frontend_proj(feats))
        t_frames = latents.shape[1]
        frame_lens = self.frontend_lengths(lengths)
        frame_pad = np.arange(t_frames)[None, :] >= frame_lens[:, None]
        sel = np.asarray(frame_mask, dtype=np.float64)[:, :, None]
        x = T.add(T.mul(latents, 1.0 - sel), T.mul(T.reshape(self.mask_emb, (1, 1, -1)), sel))
        x = T.add(x, self._positions(t_frames)[None])
        mask = frame_pad[:, None, None, :]
        for block in self.speech_bottom:
            x = block(x, mask=mask, dropout=self.config.dropout, rng=train_rng)
        return x, latents, frame_pad

    def encode_text(self, rows: Sequence[Sequence[int]], pad_id: int = 0, train_rng=None):
        """Batched text encoding via the shared top layers."""
        ids = np.full((len(rows), max(len(r) for r in rows)), pad_id, dtype=np.int64)
        pad = np.ones_like(ids, dtype=bool)
        for i, r in enumerate(rows):
            ids[i, :len(r)] = r
            pad[i, :len(r)] = False
        if (ids < 0).any() or (ids >= self.config.vocab_size).any():
            raise DataError(f"token id out of range [0, {self.config.vocab_size})")
        x = T.mul(T.take_rows(self.text_embed, ids), self._embed_scale)
        x = T.add(x, self._positions(ids.shape[1])[None])
        return self._run_shared(x, pad, self.config.dropout, train_rng), pad

    def decode_logits(self, enc_states: Tensor, enc_pad: Optional[np.ndarray],
                      prev_ids: np.ndarray, tgt_pad: Optional[np.ndarray] = None,
                      train_rng=None) -> Tensor:
        """Causal decoder over [B, Tt] previous tokens; returns [B, Tt, V] logits."""
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        if prev_ids.ndim != 2:
            raise DimensionError(f"decode_logits expects [B, T] ids, got {prev_ids.shape}")
        lo, hi = lid_id_range(self.config.n_languages)
        first = prev_ids[:, 0]
        if ((first < lo) | (first >= hi)).any():
            raise UsageError("decoder input must begin with a language-id token")
        if (prev_ids < 0).any() or (prev_ids >= self.config.vocab_size).any():
            raise DataError(f"token id out of range [0, {self.config.vocab_size})")
        b, tt = prev_ids.shape
        dropout = self.config.dropout
        x = T.mul(T.take_rows(self.dec_embed, prev_ids), self._embed_scale)
        x = T.add(x, self._positions(tt)[None])
        causal = np.triu(np.ones((tt, tt), dtype=bool), k=1)[None, None]
        self_mask = causal if tgt_pad is None else (causal | tgt_pad[:, None, None, :])
        cross_mask = None if enc_pad is None else enc_pad[:, None, None, :]
        for block in self.decoder:
            x = block(x, enc_states, self_mask, cross_mask, dropout=dropout, rng=train_rng)
        return self.out_proj(self.decoder_norm(x))

    # Single-sequence conveniences (the spec-level operation signatures).

    def forward_speech(self, waveform: np.ndarray) -> Tensor:
        states, _ = self.encode_speech([np.asarray(waveform, dtype=np.float64)])
        return T.reshape(states, states.shape[1:])

    def forward_text(self, ids: Sequence[int]) -> Tensor:
        states, _ = self.encode_text([list(ids)])
        return T.reshape(states, states.shape[1:])

    def forward_decoder(self, encoder_states: Tensor, prev_tokens: Sequence[int]) -> Tensor:
        states = encoder_states
        if states.ndim == 2:
            states = T.reshape(states, (1,) + states.shape)
        logits = self.decode_logits(states, None, np.asarray([list(prev_tokens)]))
        return T.reshape(logits, logits.shape[1:])


# ---------------------------------------------------------------------------
# checkpoints: params.tsv + params.bin (float32 LE) + config.kv

@dataclass
class Checkpoint:
    params: dict
    config: dict
    step: int = 0
    frozen: tuple = ()

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())


def write_checkpoint(params: dict, kv: dict, path, step: int = 0,
                     frozen: Sequence[str] = ()) -> None:
    """Write a params.tsv + params.bin + config.kv checkpoint directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = []
    blob = bytearray()
    for name, arr in params.items():
        arr = np.asarray(arr).astype("<f4")
        manifest.append(f"{name}\tf32\t{','.join(str(s) for s in arr.shape)}")
        blob.extend(arr.tobytes())
    (path / "params.tsv").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    (path / "params.bin").write_bytes(bytes(blob))
    kv = dict(kv)
    kv["step"] = str(step)
    if frozen:
        kv["frozen"] = ";".join(frozen)
    (path / "config.kv").write_text(
        "".join(f"{k}={v}\n" for k, v in kv.items()), encoding="utf-8")


def save_checkpoint(model: JointModel, path, step: int = 0, frozen: Sequence[str] = ()) -> None:
    params = {name: t.data for name, t in model.parameters()}
    write_checkpoint(params, model.config.to_kv(), path, step=step, frozen=frozen)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest_path, bin_path, kv_path = path / "params.tsv", path / "params.bin", path / "config.kv"
    for p in (manifest_path, bin_path, kv_path):
        if not p.exists():
            raise DataError(f"checkpoint file missing: {p}")
    kv = {}
    for ln, raw in enumerate(kv_path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        if "=" not in raw:
            raise DataError(f"{kv_path}:{ln}: expected key=value")
        k, v = raw.split("=", 1)
        kv[k] = v
    blob = bin_path.read_bytes()
    params = {}
    offset = 0
    for ln, raw in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) != 3:
            raise DataError(f"{manifest_path}:{ln}: expected name<TAB>dtype<TAB>shape")
        name, dtype, shape_s = cols
        if dtype != "f32":
            raise DataError(f"{manifest_path}:{ln}: unsupported dtype {dtype!r}")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(blob):
            raise DataError(f"{bin_path}: truncated at byte offset {len(blob)} "
                            f"(need {offset + nbytes} for {name})")
        params[name] = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{bin_path}: {len(blob) - offset} trailing bytes at offset {offset}")
    step = int(kv.pop("step", "0"))
    frozen = tuple(s for s in kv.pop("frozen", "").split(";") if s)
    return Checkpoint(params=params, config=kv, step=step, frozen=frozen)


def load_state(model: JointModel, checkpoint: Checkpoint,
               prefixes: Optional[Sequence[str]] = None) -> list:
    """Copy checkpoint parameters into the model; returns the copied names.

    With `prefixes`, only matching names are required and copied. Shape
    mismatches raise ConfigError naming the parameter.
    """
    copied = []
    for name, t in model.parameters():
        if prefixes is not None and not name.startswith(tuple(prefixes)):
            continue
        if name not in checkpoint.params:
            if prefixes is None:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            continue
        src = checkpoint.params[name]
        if tuple(src.shape) != t.shape:
            raise ConfigError(f"shape mismatch for parameter {name!r}: "
                              f"checkpoint {tuple(src.shape)} vs model {t.shape}")
        t.data = src.astype(np.float64)
        copied.append(name)
    return copied


def model_from_checkpoint(path, strict: bool = True) -> JointModel:
    ckpt = load_checkpoint(path)
    config = JointModelConfig.from_kv(ckpt.config)
    model = JointModel(config, seed=0)
    load_state(model, ckpt, prefixes=None if strict else [""])
    return model


def init_from_pretrained(speech_ckpt: Optional[Checkpoint], text_ckpt: Optional[Checkpoint],
                         config: JointModelConfig, seed: int = 0) -> JointModel:
    """Assemble a joint model from modality checkpoints.

    Front end and bottom layers come from the speech checkpoint; shared
    layers, embeddings and decoder from the text checkpoint. The adaptor is
    always freshly initialized from `seed`.
    """
    model = JointModel(config, seed=seed)
    if speech_ckpt is not None:
        for name, t in model.parameters(include_prefixes=SPEECH_PREFIXES):
            if name not in speech_ckpt.params:
                raise ConfigError(f"speech checkpoint is missing parameter {name!r}")
        load_state(model, speech_ckpt, prefixes=SPEECH_PREFIXES)
    if text_ckpt is not None:
        for name, t in model.parameters(include_prefixes=TEXT_PREFIXES):
            if name not in text_ckpt.params:
                raise ConfigError(f"text checkpoint is missing parameter {name!r}")
        load_state(model, text_ckpt, prefixes=TEXT_PREFIXES)
    return model
