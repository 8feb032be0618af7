import numpy as np
import pytest

from stkit import tensor as T
from stkit.errors import ConfigError, DataError, UsageError
from stkit.model import (JointModel, JointModelConfig, conv_out_len,
                         init_from_pretrained, lid_id_range, load_checkpoint,
                         load_state, model_from_checkpoint, save_checkpoint)


def tiny_config(**kwargs):
    defaults = dict(vocab_size=32, n_languages=2, d_model=16, n_heads=2, ffn_dim=32,
                    speech_frontend=((4, 8, 4), (8, 4, 2), (8, 4, 2)),
                    n_speech_bottom_layers=1, n_shared_encoder_layers=1,
                    n_decoder_layers=1, max_positions=256)
    defaults.update(kwargs)
    return JointModelConfig(**defaults)


def lid(config, i=0):
    return lid_id_range(config.n_languages)[0] + i


def test_adaptor_length_composition():
    cfg = tiny_config()
    model = JointModel(cfg, seed=0)
    assert model.adaptor_lengths([64]).tolist() == [8]    # 64 -> 32 -> 16 -> 8
    assert model.adaptor_lengths([65]).tolist() == [9]    # 65 -> 33 -> 17 -> 9
    lens = 65
    for _ in range(3):
        lens = conv_out_len(lens, cfg.adaptor_kernel, 2, cfg.adaptor_padding)
    assert lens == 9


def test_forward_speech_shape_and_finiteness():
    cfg = tiny_config()
    model = JointModel(cfg, seed=1)
    rng = np.random.default_rng(0)
    wave = rng.normal(size=400)
    out = model.forward_speech(wave)
    frames = model.frontend_lengths([400])[0]
    expected = model.adaptor_lengths([frames])[0]
    assert out.shape == (expected, cfg.d_model)
    assert np.isfinite(out.data).all()


def test_forward_speech_too_short_reports_minimum():
    model = JointModel(tiny_config(), seed=1)
    min_len = model.min_waveform_length()
    with pytest.raises(DataError, match=str(min_len)):
        model.forward_speech(np.zeros(min_len - 1))
    # exactly the minimum must work
    out = model.forward_speech(np.zeros(min_len))
    assert out.shape[0] >= 1


def test_forward_text_shape_and_out_of_range():
    cfg = tiny_config()
    model = JointModel(cfg, seed=2)
    out = model.forward_text([6, 7, 8])
    assert out.shape == (3, cfg.d_model)
    with pytest.raises(DataError):
        model.forward_text([cfg.vocab_size])


def test_shared_layers_are_shared_storage():
    cfg = tiny_config()
    model = JointModel(cfg, seed=3)
    rng = np.random.default_rng(1)
    wave = rng.normal(size=400)
    before = model.forward_speech(wave).data.copy()
    # nudge a shared-layer parameter through its text-path name
    model.param("shared.0.attn.q.w").data += rng.normal(size=(cfg.d_model, cfg.d_model)) * 0.05
    after = model.forward_speech(wave).data
    assert not np.allclose(before, after)


def test_text_padding_does_not_leak():
    cfg = tiny_config()
    model = JointModel(cfg, seed=4)
    states_single, _ = model.encode_text([[6, 7, 8]])
    states_padded, pad = model.encode_text([[6, 7, 8], [6, 7, 8, 9, 10]])
    np.testing.assert_allclose(states_padded.data[0, :3], states_single.data[0], atol=1e-10)


def test_decoder_causality():
    cfg = tiny_config()
    model = JointModel(cfg, seed=5)
    rng = np.random.default_rng(2)
    wave = rng.normal(size=400)
    enc = model.forward_speech(wave)
    tokens = [lid(cfg), 8, 9, 10, 11]
    base = model.forward_decoder(enc, tokens).data
    altered = list(tokens)
    altered[-1] = 12  # change the future relative to position 3
    perturbed = model.forward_decoder(enc, altered).data
    np.testing.assert_allclose(base[:4], perturbed[:4], atol=1e-12)
    assert np.isfinite(base).all()


def test_decoder_requires_lid_prefix():
    cfg = tiny_config()
    model = JointModel(cfg, seed=6)
    enc = model.forward_text([8, 9])
    with pytest.raises(UsageError):
        model.forward_decoder(enc, [8, 9])


def test_decoder_shared_between_paths():
    cfg = tiny_config()
    model = JointModel(cfg, seed=7)
    rng = np.random.default_rng(3)
    enc_s = model.forward_speech(rng.normal(size=400))
    enc_t = model.forward_text([6, 7, 8])
    tokens = [lid(cfg), 6, 7]
    a = model.forward_decoder(enc_s, tokens)
    b = model.forward_decoder(enc_t, tokens)
    assert a.shape == b.shape == (3, cfg.vocab_size)
    # single parameter set: decoder names appear once
    names = [n for n, _ in model.parameters()]
    assert len(names) == len(set(names))


def test_gradient_reaches_first_conv_from_decoder_loss():
    cfg = tiny_config()
    model = JointModel(cfg, seed=8)
    rng = np.random.default_rng(4)
    states, pad = model.encode_speech([rng.normal(size=400)])
    logits = model.decode_logits(states, pad, np.array([[lid(cfg), 6, 7]]))
    T.backward(T.sum_(T.mul(logits, logits)))
    g = model.param("frontend.0.w").grad
    assert g is not None and np.linalg.norm(g) > 0


def test_checkpoint_roundtrip_forward_delta(tmp_path):
    cfg = tiny_config()
    model = JointModel(cfg, seed=9)
    rng = np.random.default_rng(5)
    wave = rng.normal(size=400)
    before = model.forward_speech(wave).data.copy()
    save_checkpoint(model, tmp_path / "ckpt.d", step=3)
    restored = model_from_checkpoint(tmp_path / "ckpt.d")
    after = restored.forward_speech(wave).data
    scale = max(1.0, np.abs(before).max())
    assert np.abs(after - before).max() < 1e-6 * scale
    ckpt = load_checkpoint(tmp_path / "ckpt.d")
    assert ckpt.step == 3
    assert ckpt.parameter_count() == model.parameter_count()


def test_checkpoint_mismatched_config_errors(tmp_path):
    model = JointModel(tiny_config(), seed=10)
    save_checkpoint(model, tmp_path / "ckpt.d")
    other = JointModel(tiny_config(d_model=32, ffn_dim=64), seed=0)
    with pytest.raises(ConfigError, match="shape mismatch"):
        load_state(other, load_checkpoint(tmp_path / "ckpt.d"))


def test_checkpoint_corrupt_bin_reports_offset(tmp_path):
    model = JointModel(tiny_config(), seed=11)
    save_checkpoint(model, tmp_path / "ckpt.d")
    blob = (tmp_path / "ckpt.d" / "params.bin").read_bytes()
    (tmp_path / "ckpt.d" / "params.bin").write_bytes(blob[:100])
    with pytest.raises(DataError, match="offset"):
        load_checkpoint(tmp_path / "ckpt.d")


def test_init_from_pretrained_adaptor_fresh(tmp_path):
    cfg = tiny_config()
    speech_donor = JointModel(cfg, seed=20)
    text_donor = JointModel(cfg, seed=21)
    save_checkpoint(speech_donor, tmp_path / "speech.d")
    save_checkpoint(text_donor, tmp_path / "text.d")
    s_ckpt = load_checkpoint(tmp_path / "speech.d")
    t_ckpt = load_checkpoint(tmp_path / "text.d")

    m1 = init_from_pretrained(s_ckpt, t_ckpt, cfg, seed=1)
    m2 = init_from_pretrained(s_ckpt, t_ckpt, cfg, seed=2)
    assert not np.allclose(m1.param("adaptor.0.w").data, m2.param("adaptor.0.w").data)
    for name, t in m1.parameters():
        if not name.startswith("adaptor."):
            np.testing.assert_array_equal(t.data, m2.param(name).data, err_msg=name)

    # text path matches the text donor exactly (both loaded from float32)
    donor_restored = JointModel(cfg, seed=0)
    load_state(donor_restored, t_ckpt)
    ids = [6, 7, 8]
    np.testing.assert_allclose(m1.forward_text(ids).data,
                               donor_restored.forward_text(ids).data, atol=1e-12)


def test_init_from_pretrained_without_checkpoints_is_seeded():
    cfg = tiny_config()
    a = init_from_pretrained(None, None, cfg, seed=3)
    b = JointModel(cfg, seed=3)
    for name, t in a.parameters():
        np.testing.assert_array_equal(t.data, b.param(name).data)


def test_init_from_pretrained_shape_mismatch_names_param(tmp_path):
    cfg = tiny_config()
    donor = JointModel(tiny_config(d_model=32, ffn_dim=64), seed=0)
    save_checkpoint(donor, tmp_path / "bad.d")
    with pytest.raises(ConfigError, match="frontend_proj"):
        init_from_pretrained(load_checkpoint(tmp_path / "bad.d"), None, cfg)
