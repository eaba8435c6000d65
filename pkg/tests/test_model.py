import math

import numpy as np
import pytest

from graphtune import autodiff as ad
from graphtune.dfscode import Vocabulary, encode_min_dfs
from graphtune.errors import ConfigError, ShapeError
from graphtune.graph import Graph
from graphtune.model import (
    ConditionSpots,
    HyperParams,
    as_tensors,
    batch_loss,
    decode_teacher_forced,
    encode,
    init_params,
    kl_divergence,
    kl_loss,
    loss_and_grads,
    make_batch,
    param_shapes,
    reconstruction_loss,
    total_loss,
)
from oracles import fd_max_rel_error, kl_quadrature

PATH5 = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
STAR4 = Graph(4, [(0, 1), (0, 2), (0, 3)])


def mini_hp(spots=ConditionSpots(), **kw):
    vocab = Vocabulary.from_codes([encode_min_dfs(PATH5), encode_min_dfs(STAR4)])
    base = dict(condition_dim=2, enc_layers=2, enc_hidden=8, enc_embed=6, latent_dim=4,
                dec_layers=2, dec_hidden=8, dec_embed=5, sos_dim=5, beta=3.0, spots=spots)
    base.update(kw)
    return HyperParams(vocab, **base)


def mini_batch(hp, graphs=(PATH5,), conds=(0.7,)):
    return make_batch([encode_min_dfs(g) for g in graphs], conds, hp.vocab, hp.condition_dim)


def test_mini_vocab_fits_limits():
    hp = mini_hp()
    assert max(hp.vocab.sizes) <= 6
    assert mini_batch(hp).x.shape[0] == 5


@pytest.mark.parametrize("spots", [ConditionSpots(), ConditionSpots(False, True, False), ConditionSpots(True, False, True)])
def test_gradient_matches_finite_differences(spots):
    hp = mini_hp(spots)
    params = init_params(hp, seed=3)
    batch = mini_batch(hp)
    noise = np.random.default_rng(1).normal(size=(1, hp.latent_dim))
    _, grads = loss_and_grads(params, hp, batch, noise)

    def f():
        return batch_loss(as_tensors(params), hp, batch, noise)[1].total

    assert fd_max_rel_error(params, grads, f) <= 1e-4


def test_gradient_with_padded_batch():
    hp = mini_hp()
    params = init_params(hp, seed=5)
    batch = mini_batch(hp, (PATH5, STAR4), (0.2, 0.9))
    assert batch.mask[:, 1].sum() < batch.mask[:, 0].sum()
    noise = np.random.default_rng(2).normal(size=(2, hp.latent_dim))
    _, grads = loss_and_grads(params, hp, batch, noise)
    f = lambda: batch_loss(as_tensors(params), hp, batch, noise)[1].total
    assert fd_max_rel_error(params, grads, f) <= 1e-4


def test_batch_is_mean_of_single_examples():
    hp = mini_hp()
    params = init_params(hp, seed=5)
    noise = np.random.default_rng(2).normal(size=(2, hp.latent_dim))
    both, g_both = loss_and_grads(params, hp, mini_batch(hp, (PATH5, STAR4), (0.2, 0.9)), noise)
    a, g_a = loss_and_grads(params, hp, mini_batch(hp, (PATH5,), (0.2,)), noise[:1])
    b, g_b = loss_and_grads(params, hp, mini_batch(hp, (STAR4,), (0.9,)), noise[1:])
    assert both.total == pytest.approx((a.total + b.total) / 2, rel=1e-12)
    for k in g_both:
        np.testing.assert_allclose(g_both[k], (g_a[k] + g_b[k]) / 2, rtol=1e-9, atol=1e-14)


def test_kl_exact_values():
    assert float(kl_loss(ad.Tensor(np.zeros((1, 3))), ad.Tensor(np.zeros((1, 3)))).data) == 0.0
    assert abs(float(kl_loss(ad.Tensor([[1.0]]), ad.Tensor([[0.0]])).data) - 0.5) <= 1e-12


def test_kl_matches_quadrature():
    rng = np.random.default_rng(4)
    mu, lv = rng.uniform(-1.5, 1.5, 3), rng.uniform(-1.0, 1.0, 3)
    ref = sum(kl_quadrature(m, math.exp(v)) for m, v in zip(mu, lv))
    assert kl_divergence(mu, lv) == pytest.approx(ref, abs=1e-6)
    assert float(kl_loss(ad.Tensor(mu[None]), ad.Tensor(lv[None])).data) == pytest.approx(ref, abs=1e-6)


def test_kl_nonnegative_and_zero_only_at_prior():
    rng = np.random.default_rng(0)
    vals = kl_divergence(rng.normal(size=(500, 4)), rng.normal(size=(500, 4)))
    assert (vals > 0).all()


def test_reconstruction_closed_forms():
    vocab = Vocabulary(t_size=3, l_size=3)
    x = make_batch([[(0, 1, 1, 0, 1)]], [0.0], vocab, 1).x
    mask = np.ones(x.shape[:2])
    perfect = np.where(x > 0, 0.0, np.log(1e-12))
    assert float(reconstruction_loss(ad.Tensor(perfect), x, mask).data) == 0.0
    uniform = np.concatenate([np.full((2, 1, s), -math.log(s)) for s in vocab.sizes], axis=-1)
    expect = sum(math.log(s) for s in vocab.sizes)
    assert float(reconstruction_loss(ad.Tensor(uniform), x, mask).data) == pytest.approx(expect, abs=1e-12)


def test_reconstruction_two_position_toy():
    vocab = Vocabulary(t_size=3, l_size=3)
    x = make_batch([[(0, 1, 0, 0, 1)]], [0.0], vocab, 1).x  # positions: tuple and EOS
    # blocks: t_u(3) t_v(3) l_u(3) l_e(2) l_v(3)
    p = np.array([[0.9, 0.05, 0.05, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1, 0.3, 0.7, 0.2, 0.5, 0.3],
                  [0.1, 0.15, 0.75, 0.05, 0.05, 0.9, 0.2, 0.15, 0.65, 0.45, 0.55, 0.1, 0.05, 0.85]])
    # position 0 targets (0,1,0,0,1); position 1 is EOS = (2,2,2,1,2)
    pos0 = -(math.log(0.9) + math.log(0.7) + math.log(0.6) + math.log(0.3) + math.log(0.5))
    pos1 = -(math.log(0.75) + math.log(0.9) + math.log(0.65) + math.log(0.55) + math.log(0.85))
    got = float(reconstruction_loss(ad.Tensor(np.log(p)[:, None, :]), x, np.ones((2, 1))).data)
    assert abs(got - (pos0 + pos1) / 2) <= 1e-12


def test_total_loss():
    assert total_loss(0.5, 2.0, 3.0) == 3.5
    assert total_loss(0.7, 2.0, 0.0) == 2.0
    assert total_loss(0.0, 1.25, 3.0) == 1.25


def test_zero_params_give_zero_mu_and_uniform_heads():
    hp = mini_hp()
    params = {k: np.zeros_like(v) for k, v in init_params(hp, 0).items()}
    tp = as_tensors(params)
    batch = mini_batch(hp)
    mu, lv = encode(tp, hp, batch.x, batch.mask, batch.cond)
    assert not mu.data.any() and not lv.data.any()
    assert float(kl_loss(mu, lv).data) == 0.0
    logp = decode_teacher_forced(tp, hp, batch.x, batch.mask, mu, batch.cond)
    assert logp.shape[0] == batch.x.shape[0]
    probs = np.exp(logp.data[:, 0])
    for off, size in zip(hp.vocab.offsets, hp.vocab.sizes):
        np.testing.assert_allclose(probs[:, off : off + size], 1.0 / size, rtol=1e-12)


def test_heads_are_distributions_and_encode_is_deterministic():
    hp = mini_hp()
    tp = as_tensors(init_params(hp, 9))
    batch = mini_batch(hp)
    m1, v1 = encode(tp, hp, batch.x, batch.mask, batch.cond)
    m2, v2 = encode(tp, hp, batch.x, batch.mask, batch.cond)
    np.testing.assert_array_equal(m1.data, m2.data)
    np.testing.assert_array_equal(v1.data, v2.data)
    logp = decode_teacher_forced(tp, hp, batch.x, batch.mask, m1, batch.cond)
    probs = np.exp(logp.data)
    for off, size in zip(hp.vocab.offsets, hp.vocab.sizes):
        np.testing.assert_allclose(probs[..., off : off + size].sum(-1), 1.0, atol=1e-12)
    flipped = batch.x.copy()
    flipped[1, 0] = flipped[2, 0]
    m3, _ = encode(tp, hp, flipped, batch.mask, batch.cond)
    assert not np.array_equal(m1.data, m3.data)


def test_encoder_ignores_condition_when_spot_off():
    hp = mini_hp(ConditionSpots(False, True, True))
    tp = as_tensors(init_params(hp, 2))
    b1, b2 = mini_batch(hp, conds=(0.1,)), mini_batch(hp, conds=(5.0,))
    np.testing.assert_array_equal(encode(tp, hp, b1.x, b1.mask, b1.cond)[0].data, encode(tp, hp, b2.x, b2.mask, b2.cond)[0].data)
    hp_on = mini_hp()
    tp_on = as_tensors(init_params(hp_on, 2))
    assert not np.array_equal(
        encode(tp_on, hp_on, b1.x, b1.mask, b1.cond)[0].data, encode(tp_on, hp_on, b2.x, b2.mask, b2.cond)[0].data
    )


def test_all_spots_off_is_unconditional():
    hp = mini_hp(ConditionSpots(False, False, False))
    params = init_params(hp, 2)
    noise = np.random.default_rng(0).normal(size=(1, hp.latent_dim))
    l1 = batch_loss(as_tensors(params), hp, mini_batch(hp, conds=(0.1,)), noise)[1]
    l2 = batch_loss(as_tensors(params), hp, mini_batch(hp, conds=(7.0,)), noise)[1]
    assert l1 == l2
    assert not any(k.startswith("dinit") for k in params)


def test_param_shapes_follow_spots_and_heads():
    hp = mini_hp()
    shapes = param_shapes(hp)
    assert [shapes[f"head_{h}.W"][1] for h in ("t_u", "t_v", "l_u", "l_e", "l_v")] == list(hp.vocab.sizes)
    assert shapes["enc_emb.W"][0] == hp.vocab.width + hp.condition_dim
    assert shapes["dec.0.wx"][0] == hp.dec_embed + hp.latent_dim + hp.condition_dim
    params = init_params(hp, 0)
    assert params["dec.0.b"][hp.dec_hidden : 2 * hp.dec_hidden].tolist() == [1.0] * hp.dec_hidden
    bound = 1 / math.sqrt(shapes["demb.W"][0])
    assert np.abs(params["demb.W"]).max() <= bound


def test_defaults_and_validation():
    hp = HyperParams(Vocabulary(4, 4))
    assert (hp.enc_layers, hp.enc_hidden, hp.enc_embed, hp.latent_dim) == (2, 223, 227, 10)
    assert (hp.dec_layers, hp.dec_hidden, hp.dec_embed, hp.sos_dim, hp.beta) == (3, 250, 250, 250, 3.0)
    with pytest.raises(ConfigError):
        HyperParams(Vocabulary(4, 4), latent_dim=0)
    with pytest.raises(ConfigError):
        HyperParams(Vocabulary(4, 4), sos_dim=10)
    assert HyperParams.from_dict(hp.to_dict()) == hp


def test_shape_mismatch_is_reported():
    hp = mini_hp()
    tp = as_tensors(init_params(hp, 0))
    batch = mini_batch(hp)
    with pytest.raises(ShapeError):
        encode(tp, hp, batch.x[:, :, :-1], batch.mask, batch.cond)
    with pytest.raises(ShapeError):
        decode_teacher_forced(tp, hp, batch.x, batch.mask, ad.Tensor(np.zeros((1, 3))), batch.cond)


def test_spots_parse():
    assert ConditionSpots.parse("e,d,h") == ConditionSpots()
    assert ConditionSpots.parse("d,h") == ConditionSpots(False, True, True)
    assert ConditionSpots.parse("none") == ConditionSpots(False, False, False)
    assert ConditionSpots(True, False, True).label() == "e,h"
    with pytest.raises(ConfigError):
        ConditionSpots.parse("x")


def test_condition_scaling_matches_prescaled_input():
    hp = mini_hp()
    scaled = mini_hp(cond_shift=4.0, cond_scale=0.5)
    params = init_params(hp, seed=2)
    noise = np.random.default_rng(0).normal(size=(2, hp.latent_dim))
    raw = mini_batch(hp, (PATH5, STAR4), (3.5, 4.5))
    pre = mini_batch(hp, (PATH5, STAR4), (-1.0, 1.0))
    a, _ = loss_and_grads(params, scaled, raw, noise)
    b, _ = loss_and_grads(params, hp, pre, noise)
    assert a.total == pytest.approx(b.total, rel=1e-14)
    with pytest.raises(ConfigError):
        mini_hp(cond_scale=0.0)
