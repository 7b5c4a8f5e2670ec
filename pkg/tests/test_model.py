import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from orderflow import model as m
from orderflow.errors import CorruptFile, DivergedLoss, FormatVersionError, IndexOutOfVocab, SequenceTooLong


def tiny(**kw):
    base = dict(
        n_layers=2, hidden_dim=8, n_heads=2, n_kv_heads=1, context_length=12, vocab_trade=16,
        n_price_level=4, emb_trade=2, emb_price_level=2, emb_liquidity=2, emb_scope=2,
        zero_init_head=False, dtype="float64",
    )
    base.update(kw)
    return m.ModelConfig(**base)


def random_rows(rng, cfg, n, batch=None):
    shape = (n,) if batch is None else (batch, n)
    return np.stack([
        rng.integers(0, cfg.n_liquidity, shape), rng.integers(0, cfg.n_scope, shape),
        rng.integers(0, cfg.n_price_level, shape), rng.integers(0, cfg.vocab_trade, shape),
    ], axis=-1)


def bos_batch(rng, cfg, n, batch):
    return np.stack([m.with_bos(r, cfg) for r in random_rows(rng, cfg, n, batch)])


def test_config_invariants():
    cfg = m.ModelConfig()
    assert cfg.mlp_dim == 4 * cfg.hidden_dim and cfg.head_dim % 2 == 0
    assert cfg.emb_trade + cfg.emb_price_level + cfg.emb_liquidity + cfg.emb_scope == 64
    with pytest.raises(ValueError):
        m.ModelConfig(n_heads=4, n_kv_heads=3)
    with pytest.raises(ValueError):
        m.ModelConfig(hidden_dim=12, n_heads=4)


def test_gradient_check_all_parameters():
    cfg = tiny()
    model = m.TradeModel(cfg, seed=1)
    batch = bos_batch(np.random.default_rng(0), cfg, 6, 2)
    _, grads = m.loss_and_gradients(model, batch)
    h = 1e-5
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        fd = np.empty(flat.numel())
        for i in range(flat.numel()):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + h
                up = m.per_sequence_loss(model, batch).mean().item()
                flat[i] = old - h
                dn = m.per_sequence_loss(model, batch).mean().item()
                flat[i] = old
            fd[i] = (up - dn) / (2 * h)
        g = grads[name].ravel()
        err = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        assert err < 1e-4, (name, err)


def test_initial_loss_is_uniform():
    cfg = m.ModelConfig()
    model = m.TradeModel(cfg)
    batch = bos_batch(np.random.default_rng(1), cfg, 32, 2)
    loss, _ = m.loss_and_gradients(model, batch)
    assert abs(loss - math.log(16384)) <= 0.05 * math.log(16384)
    assert loss == pytest.approx(math.log(16384), rel=1e-6)


def test_duplicate_batch_entries():
    cfg = tiny()
    model = m.TradeModel(cfg)
    one = bos_batch(np.random.default_rng(2), cfg, 8, 1)
    losses = m.per_sequence_loss(model, np.concatenate([one, one])).detach().numpy()
    assert losses[0] == losses[1]


def test_embed_contracts():
    cfg = tiny()
    model = m.TradeModel(cfg)
    rows = random_rows(np.random.default_rng(3), cfg, 5)
    rows[3] = rows[1]
    e = model.embed(torch.as_tensor(rows)[None]).detach()
    assert e.shape == (1, 5, cfg.hidden_dim)
    assert torch.equal(e[0, 1], e[0, 3])
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.startswith("emb_"):
                p.zero_()
    assert torch.count_nonzero(model.embed(torch.as_tensor(rows)[None])) == 0
    bad = rows.copy()
    bad[0, 2] = cfg.n_price_level
    with pytest.raises(IndexOutOfVocab):
        model(bad)


def test_sequence_too_long():
    cfg = tiny()
    with pytest.raises(SequenceTooLong):
        m.TradeModel(cfg)(random_rows(np.random.default_rng(0), cfg, cfg.context_length + 1))


def test_causality_and_softmax():
    cfg = tiny()
    model = m.TradeModel(cfg, seed=4)
    rows = random_rows(np.random.default_rng(5), cfg, 10)
    base = model(rows).detach()
    for t in (0, 4, 9):
        other = rows.copy()
        other[t, 3] = (other[t, 3] + 1) % cfg.vocab_trade
        other[t, 2] = (other[t, 2] + 1) % cfg.n_price_level
        out = model(other).detach()
        assert torch.equal(out[0, :t], base[0, :t])
        assert not torch.equal(out[0, t], base[0, t])
    p = torch.softmax(base, dim=-1).sum(-1)
    assert torch.allclose(p, torch.ones_like(p), atol=1e-6)


def test_rope_identity_at_zero_and_position_sensitivity():
    cos, sin = m.rope_tables(8, 4, 10000.0, torch.float64)
    x = torch.randn(1, 8, 2, 4, dtype=torch.float64)
    y = m.apply_rope(x, cos, sin)
    assert torch.equal(y[:, 0], x[:, 0])
    assert torch.allclose(y.norm(dim=-1), x.norm(dim=-1))
    cfg = tiny()
    rows = random_rows(np.random.default_rng(6), cfg, 4)
    swapped = rows[[1, 0, 2, 3]]
    with_rope = m.TradeModel(cfg, seed=2)
    assert not torch.allclose(with_rope(rows)[0, 3], with_rope(swapped)[0, 3])
    no_rope = m.TradeModel(tiny(use_rope=False, n_layers=1), seed=2)
    # without positions, one layer lets the last query see the same set of keys in either order
    assert torch.allclose(no_rope(rows)[0, 3], no_rope(swapped)[0, 3], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 3), st.sampled_from([(4, 2), (4, 1), (2, 2), (6, 3)]), st.integers(1, 4),
    st.integers(1, 10), st.integers(1, 3),
)
def test_shapes_random_configs(layers, heads, hd_half, t, batch):
    nh, nkv = heads
    cfg = tiny(n_layers=layers, n_heads=nh, n_kv_heads=nkv, hidden_dim=nh * 2 * hd_half, dtype="float32")
    model = m.TradeModel(cfg)
    out = model(random_rows(np.random.default_rng(t), cfg, t, batch))
    assert out.shape == (batch, t, cfg.vocab_trade)
    assert torch.isfinite(out).all()


def corpus(n_seq=3, n=400, seed=0, vocab=16):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_seq):
        # a repeating pattern the model can learn
        trade = (np.arange(n) * 5 + rng.integers(0, 2, n)) % vocab
        rows = np.zeros((n, 4), dtype=np.int64)
        rows[:, 3] = trade
        out.append(rows)
    return out


def test_zero_steps_returns_initial_model():
    cfg = tiny()
    res = m.train(corpus(), cfg, m.TrainConfig(steps=0))
    fresh = m.TradeModel(cfg, seed=0)
    for (a, pa), (b, pb) in zip(res.model.named_parameters(), fresh.named_parameters()):
        assert torch.equal(pa, pb), a
    assert res.curve == []


def test_training_is_deterministic_and_learns():
    cfg = tiny()
    tc = m.TrainConfig(steps=200, batch_size=8, lr=2e-2, warmup=10, eval_every=50, eval_batches=2)
    a = m.train(corpus(), cfg, tc)
    b = m.train(corpus(), cfg, tc)
    assert a.curve == b.curve
    assert a.curve[-1][2] < math.log(cfg.vocab_trade) - 0.5


def test_diverged_loss():
    cfg = tiny()
    with pytest.raises(DivergedLoss):
        m.train(corpus(), cfg, m.TrainConfig(steps=5, batch_size=2, diverge_loss=0.0, eval_batches=1))


def test_lr_schedule():
    tc = m.TrainConfig(steps=100, lr=1.0, warmup=10)
    assert m.lr_at(0, tc) == pytest.approx(0.1)
    assert m.lr_at(9, tc) == pytest.approx(1.0)
    assert m.lr_at(10, tc) == pytest.approx(1.0)
    assert m.lr_at(55, tc) == pytest.approx(0.5)
    assert m.lr_at(100, tc) == 0.0


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny(dtype="float32")
    model = m.TradeModel(cfg, seed=9)
    path = tmp_path / "toy.ckpt"
    m.save_checkpoint(model, path)
    assert path.read_bytes().startswith(b"orderflow-toy v1\n")
    back = m.load_checkpoint(path)
    assert back.cfg == cfg
    rows = random_rows(np.random.default_rng(0), cfg, 6)
    assert torch.equal(back(rows), model(rows))
    raw = path.read_bytes()
    (tmp_path / "v0.ckpt").write_bytes(raw.replace(b"v1", b"v0", 1))
    with pytest.raises(FormatVersionError):
        m.load_checkpoint(tmp_path / "v0.ckpt")
    (tmp_path / "cut.ckpt").write_bytes(raw[:-7])
    with pytest.raises(CorruptFile):
        m.load_checkpoint(tmp_path / "cut.ckpt")


def test_loss_curve_csv(tmp_path):
    m.write_loss_curve([(10, 1.5, 2.5)], tmp_path / "loss.csv")
    assert (tmp_path / "loss.csv").read_text() == "step,train_loss,val_loss\n10,1.5,2.5\n"


# -- sampling ---------------------------------------------------------------

def test_penalty_identity():
    z = np.array([2.0, -1.0, 0.5])
    p = m.token_probabilities(z, [0, 1], m.SamplerConfig(repetition_penalty=1.0))
    ref = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(p, ref, rtol=1e-15)


def test_penalty_rule():
    z = m.penalized_logits(np.array([2.0, -1.0, 0.5]), [0, 1, 0], m.SamplerConfig())
    np.testing.assert_allclose(z, [2.0 / 1.2, -1.2, 0.5])
    w = m.penalized_logits(np.array([2.0, -1.0, 0.5]), [0, 1], m.SamplerConfig(penalty_window=1))
    np.testing.assert_allclose(w, [2.0, -1.2, 0.5])


def test_low_temperature_is_argmax():
    z = np.random.default_rng(0).normal(size=50)
    s = m.SamplerConfig(repetition_penalty=1.0, temperature=1e-4)
    rng = np.random.default_rng(1)
    assert all(m.sample_next(z, [], s, rng) == int(np.argmax(z)) for _ in range(20))


def test_sampling_deterministic_and_frequencies():
    z = np.log(np.array([0.5, 0.3, 0.2]))
    s = m.SamplerConfig(repetition_penalty=1.0)
    a = [m.sample_next(z, [], s, np.random.default_rng(3)) for _ in range(5)]
    assert len(set(a)) == 1
    rng = np.random.default_rng(4)
    draws = np.bincount([m.sample_next(z, [], s, rng) for _ in range(20_000)], minlength=3) / 20_000
    np.testing.assert_allclose(draws, [0.5, 0.3, 0.2], atol=0.015)


def test_sampler_validation():
    with pytest.raises(ValueError):
        m.SamplerConfig(repetition_penalty=0.9)
    with pytest.raises(ValueError):
        m.SamplerConfig(temperature=0.0)


def test_generator_window_and_start():
    cfg = tiny(dtype="float32")
    model = m.TradeModel(cfg, seed=3)
    gen = m.Generator(model, m.SamplerConfig(seed=5))
    tok = gen.next_token(np.zeros((0, 4)), [], (1, 0, 2))
    assert 0 <= tok < cfg.vocab_trade
    rows = random_rows(np.random.default_rng(0), cfg, 40)
    a = m.Generator(model, m.SamplerConfig(seed=5)).next_token(rows, [], None)
    b = m.Generator(model, m.SamplerConfig(seed=5)).next_token(rows[-(cfg.context_length - 1):], [], None)
    assert a == b
