"""Model assembly: the light predictor, both branches, composition identity,
ablation algebra, initialization no-op, and training-step contracts."""

import numpy as np
import pytest

from dlen import ilb as ilb_mod
from dlen import lcp as lcp_mod
from dlen import seb as seb_mod
from dlen import tensor as T
from dlen.model import (DlenConfig, dlen_forward, init_params, mae_loss,
                        train_step)
from dlen.tensor import Adam, ContractViolation, NonFiniteError, Prng, Tensor


def _input(seed=1, n=2, hw=16, dtype=np.float32):
    return Tensor(Prng(seed).uniform(n * 3 * hw * hw)
                  .reshape(n, 3, hw, hw).astype(dtype))


@pytest.fixture(scope="module")
def small_model():
    return init_params(DlenConfig(width=8, train_res=16), seed=11)


def test_illumination_prior_is_channel_mean():
    x = _input(2)
    prior = lcp_mod.illumination_prior(x)
    np.testing.assert_allclose(prior.data, x.data.mean(axis=1, keepdims=True),
                               atol=1e-7)


def test_lcp_lit_image_is_elementwise_product(small_model):
    x = _input(3)
    prior = lcp_mod.illumination_prior(x)
    out = lcp_mod.lcp_forward(x, prior, small_model.params)
    np.testing.assert_array_equal(out.i_lu.data, x.data * out.l_tilde.data)
    assert out.f_lu.shape == (2, 8, 16, 16)


def test_composition_identity_is_bitwise(small_model):
    with T.no_grad():
        out = dlen_forward(_input(4), small_model)
    total = out.i_lu.data + out.i_flb.data + out.i_feb.data
    np.testing.assert_array_equal(out.i_en.data, total)


def test_init_noop_identity(small_model):
    for seed in range(5):
        with T.no_grad():
            out = dlen_forward(_input(seed), small_model)
        assert np.abs(out.i_en.data - out.i_lu.data).max() == 0.0


def test_ablation_no_seab_equals_forcing_feb_to_zero():
    full = init_params(DlenConfig(width=8, train_res=16), seed=7)
    ablated = init_params(DlenConfig(width=8, train_res=16, use_seab=False), seed=7)
    # shared parameter groups must be identical under the same seed
    for name, p in ablated.params.items():
        np.testing.assert_array_equal(p.data, full.params[name].data)
    x = _input(5)
    with T.no_grad():
        out_f = dlen_forward(x, full)
        out_a = dlen_forward(x, ablated)
    assert out_a.i_feb is None
    want = out_f.i_lu.data + out_f.i_flb.data
    np.testing.assert_array_equal(out_a.i_en.data, want)


def test_ablated_models_have_fewer_parameters():
    cfg = DlenConfig(width=8, train_res=16)
    full = init_params(cfg, 0).param_count()
    no_lwn = init_params(DlenConfig(width=8, train_res=16, use_lwn=False), 0)
    no_seab = init_params(DlenConfig(width=8, train_res=16, use_seab=False), 0)
    assert no_lwn.param_count() < full
    assert no_seab.param_count() < full


def test_seb_latent_shape_contract():
    cfg = DlenConfig(width=8, train_res=16)
    model = init_params(cfg, 1)
    cs = cfg.resolved_seb_width()
    for hw in (16, 24, 32):
        collect = {}
        with T.no_grad():
            out = dlen_forward(_input(2, n=1, hw=hw), model, collect=collect)
        assert collect["latent"].shape == (1, 8 * cs, hw // 8, hw // 8)
        assert out.i_en.shape == (1, 3, hw, hw)


def test_forward_rejects_bad_spatial_extent(small_model):
    with pytest.raises(ContractViolation):
        dlen_forward(Tensor(np.zeros((1, 3, 12, 12), dtype=np.float32)), small_model)


def test_mae_loss_values():
    a = Tensor(np.ones((2, 3)))
    assert mae_loss(a, a).item() == 0.0
    b = Tensor(np.ones((2, 3)) + 0.5)
    assert mae_loss(a, b).item() == pytest.approx(0.5, abs=1e-7)
    with pytest.raises(ContractViolation):
        mae_loss(a, Tensor(np.ones((3, 2))))


def test_train_step_with_zero_lr_keeps_parameters():
    model = init_params(DlenConfig(width=8, train_res=16), seed=2)
    before = {k: p.data.copy() for k, p in model.params.items()}
    opt = Adam(model.params, lr=0.0)
    loss = train_step(model, _input(1), _input(2), opt)
    assert loss >= 0.0 and np.isfinite(loss)
    for k, p in model.params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_train_step_reduces_loss_on_fixed_batch():
    model = init_params(DlenConfig(width=8, train_res=16), seed=3)
    opt = Adam(model.params, lr=1e-3)
    low, high = _input(1), _input(2)
    first = train_step(model, low, high, opt)
    for _ in range(10):
        last = train_step(model, low, high, opt)
    assert last < first


def test_train_step_flags_nonfinite_with_offender_name():
    # NaN in a post-attention parameter reaches the loss, which must name it
    model = init_params(DlenConfig(width=8, train_res=16), seed=4)
    bad = "ilb.exit.w"
    model.params[bad].data[0, 0, 0, 0] = np.nan
    opt = Adam(model.params, lr=1e-3)
    with pytest.raises(NonFiniteError, match=bad):
        train_step(model, _input(1), _input(2), opt)


def test_train_step_aborts_on_nan_anywhere():
    # NaN upstream of an attention softmax trips the activation guard instead
    model = init_params(DlenConfig(width=8, train_res=16), seed=4)
    model.params["lcp.light.w"].data[0, 0, 0, 0] = np.nan
    opt = Adam(model.params, lr=1e-3)
    with pytest.raises(NonFiniteError):
        train_step(model, _input(1), _input(2), opt)


def test_training_is_deterministic():
    losses = []
    for _ in range(2):
        model = init_params(DlenConfig(width=8, train_res=16), seed=5)
        opt = Adam(model.params, lr=1e-3)
        low, high = _input(3), _input(4)
        losses.append([train_step(model, low, high, opt) for _ in range(3)])
    assert losses[0] == losses[1]


def test_miab_positional_grid_resizes_to_other_resolutions():
    params = {}
    ilb_mod.init_miab(params, "m", 4, 2, (8, 8), Prng(6))
    params["m.pos"].data += Prng(7).normal(params["m.pos"].shape,
                                           dtype=np.float32)
    for hw in (4, 8, 12):
        x = Tensor(Prng(8).normal((1, hw * hw, 4), dtype=np.float32))
        y = ilb_mod.ig_attention(x, x, params, "m", 2, (hw, hw), (8, 8))
        assert y.shape == (1, hw * hw, 4)


def test_seab_attention_is_residual_at_softmax_level():
    # output shape preserved and finite for several head counts
    for heads in (1, 2, 4):
        params = {}
        seb_mod.init_seab(params, "s", 4, heads, Prng(9))
        x = Tensor(Prng(10).normal((2, 4, 6, 6), dtype=np.float32))
        y = seb_mod.seab_attention(x, params, "s", heads)
        assert y.shape == x.shape
        assert np.all(np.isfinite(y.data))
