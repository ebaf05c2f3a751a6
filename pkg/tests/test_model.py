"""Tokenizer, backbone and full-model structure: point-wise embedding, causality, KV cache."""
import numpy as np
import pytest


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["siglu", "linear"])
def test_embedding_is_pointwise(tiny_cfg, kind, rng):
    """Row t depends only on x_t."""
    from dataclasses import replace

    from eidoslab.model import EidosModel

    model = EidosModel.init(replace(tiny_cfg, tokenizer=kind), seed=1)
    x = rng.normal(size=10)
    y = x.copy()
    y[3] += 5.0
    zx, zy = model.embed(x).data, model.embed(y).data
    assert zx.shape == (10, 16)
    changed = np.any(zx != zy, axis=1)
    assert changed.tolist() == [i == 3 for i in range(10)]


def test_same_value_same_row(tiny_model):
    z = tiny_model.embed(np.array([0.7, -1.0, 0.7])).data
    np.testing.assert_array_equal(z[0], z[2])


def test_batched_matches_single(tiny_model, rng):
    x = rng.normal(size=(3, 7))
    batched = tiny_model.embed(x).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], tiny_model.embed(x[b]).data, atol=1e-12)


def test_empty_series_rejected(tiny_model):
    from eidoslab.errors import ContractError

    with pytest.raises(ContractError):
        tiny_model.embed(np.zeros(0))


@pytest.mark.parametrize("seed", range(5))
def test_siglu_gradients(seed):
    from eidoslab.gradcheck import check_gradients
    from eidoslab.tokenizer import SiGluParams, embed_series, init_siglu
    from eidoslab.tensor import sum_

    rng = np.random.default_rng(seed)
    p = init_siglu(4, 5, 3, rng)
    x = rng.normal(size=6)
    names = ["W1", "b", "W2", "W3", "W4"]

    def fn(*arrays):
        params = SiGluParams(**dict(zip(names, arrays)))
        return sum_(embed_series(x, params) * embed_series(x, params))

    assert max(check_gradients(fn, [p[n] for n in names])) < 1e-4


# ---------------------------------------------------------------------------
# Backbone
# ---------------------------------------------------------------------------

def test_config_validation():
    from eidoslab.backbone import BackboneConfig
    from eidoslab.errors import ConfigError

    with pytest.raises(ConfigError):
        BackboneConfig(n_layers=2, d_model=10, d_intermediate=8, n_heads=3)
    with pytest.raises(ConfigError):
        BackboneConfig(n_layers=2, d_model=6, d_intermediate=8, n_heads=2)  # odd head_dim
    with pytest.raises(ConfigError):
        BackboneConfig.from_preset("huge")


def test_presets():
    from eidoslab.backbone import BackboneConfig

    small = BackboneConfig.from_preset("small")
    assert (small.n_layers, small.d_model, small.n_heads) == (6, 384, 12)
    assert BackboneConfig.from_preset("large").d_model == 768


@pytest.mark.parametrize("cut", [1, 8, 23, 39])
def test_causality(tiny_model, rng, cut):
    """Changing x[cut:] leaves every state before ``cut`` bitwise untouched."""
    x = rng.normal(size=40)
    y = x.copy()
    y[cut:] += rng.normal(size=40 - cut)
    hx = tiny_model.hidden_states(x)
    hy = tiny_model.hidden_states(y)
    np.testing.assert_array_equal(hx.hidden.data[:cut], hy.hidden.data[:cut])
    for sx, sy in zip(hx.states, hy.states):
        np.testing.assert_array_equal(sx.data[:cut], sy.data[:cut])
    assert not np.allclose(hx.hidden.data[cut:], hy.hidden.data[cut:])


def test_states_per_layer(tiny_model, rng):
    out = tiny_model.hidden_states(rng.normal(size=(2, 9)))
    assert len(out.states) == 3
    assert all(s.shape == (2, 9, 16) for s in out.states)
    assert out.hidden.shape == (2, 9, 16)


def test_kv_cache_matches_full_pass(tiny_model, rng):
    x = rng.normal(size=41)
    full = tiny_model.hidden_states(x).hidden.data
    cache = tiny_model.new_cache()
    parts = [tiny_model.extend(tiny_model.embed(x[:9]), cache).hidden.data]
    for t in range(9, 41):
        parts.append(tiny_model.generate_step(tiny_model.embed(x[t:t + 1]), cache).data)
    incremental = np.concatenate(parts, axis=0)
    assert cache.filled_len == 41
    np.testing.assert_allclose(incremental, full, rtol=0, atol=1e-9)


def test_generate_step_single_position(tiny_model):
    from eidoslab.errors import DimensionError

    cache = tiny_model.new_cache()
    with pytest.raises(DimensionError):
        tiny_model.generate_step(tiny_model.embed(np.zeros(2)), cache)


def test_hook_changes_only_later_layers(tiny_model, rng):
    x = rng.normal(size=6)
    base = tiny_model.hidden_states(x)
    hooked = tiny_model.hidden_states(x, {1: lambda h: h + 1.0})
    np.testing.assert_array_equal(base.states[0].data, hooked.states[0].data)
    np.testing.assert_allclose(hooked.states[1].data, base.states[1].data + 1.0)
    assert not np.allclose(base.hidden.data, hooked.hidden.data)


# ---------------------------------------------------------------------------
# Rotary positions
# ---------------------------------------------------------------------------

def test_norm_preserving(rng):
    from eidoslab.backbone import rope_rotate

    x = rng.normal(size=(5, 8))
    y = rope_rotate(x, np.arange(5)).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=-1), np.linalg.norm(x, axis=-1))


def test_dot_product_depends_on_offset_only(rng):
    from eidoslab.backbone import rope_rotate

    q, k = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    a = rope_rotate(q, [7]).data @ rope_rotate(k, [3]).data.T
    b = rope_rotate(q, [14]).data @ rope_rotate(k, [10]).data.T
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_position_zero_is_identity(rng):
    from eidoslab.backbone import rope_rotate

    x = rng.normal(size=(1, 4))
    np.testing.assert_array_equal(rope_rotate(x, [0]).data, x)


# ---------------------------------------------------------------------------
# Model config and params
# ---------------------------------------------------------------------------

def test_hash_stable_and_sensitive(tiny_cfg):
    from dataclasses import replace

    from eidoslab.model import ModelConfig

    assert tiny_cfg.hash() == ModelConfig.from_dict(tiny_cfg.to_dict()).hash()
    assert tiny_cfg.hash() != replace(tiny_cfg, horizon=8).hash()


def test_rejects_bad_quantiles(tiny_cfg):
    from dataclasses import replace

    from eidoslab.errors import ConfigError

    with pytest.raises(ConfigError):
        replace(tiny_cfg, quantiles=(0.5, 0.1))


@pytest.mark.parametrize("kind", ["depthwise", "avgpool", "linear"])
@pytest.mark.parametrize("tok", ["siglu", "linear"])
def test_count_parameters_matches_store(tiny_cfg, kind, tok):
    from dataclasses import replace

    from eidoslab.model import EidosModel, count_parameters

    cfg = replace(tiny_cfg, aggregator=kind, tokenizer=tok)
    assert count_parameters(cfg) == EidosModel.init(cfg).params.count()


def test_init_deterministic(tiny_cfg):
    from eidoslab.model import init_params

    a, b = init_params(tiny_cfg, 5), init_params(tiny_cfg, 5)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_frozen_head_is_not_trainable(tiny_cfg):
    from dataclasses import replace

    from eidoslab.model import EidosModel

    model = EidosModel.init(replace(tiny_cfg, grounding="frozen_at_init"))
    assert "head_frozen.W_in" in model.params
    assert not any(k.startswith("head_frozen.") for k in model.params.trainable())
    np.testing.assert_array_equal(model.params["head_frozen.W_in"].data, model.params["head.W_in"].data)


def test_head_block_shape(tiny_model, rng):
    out = tiny_model.head(rng.normal(size=(3, 16)))
    assert out.shape == (3, 4, 9)


# ---------------------------------------------------------------------------
# Hand-computed values
# ---------------------------------------------------------------------------

def _one_dim(w2):
    from eidoslab.tensor import parameter
    from eidoslab.tokenizer import SiGluParams

    one = lambda: parameter(np.ones((1, 1)))  # noqa: E731
    return SiGluParams(W1=one(), b=parameter(np.zeros(1)), W2=parameter(np.full((1, 1), w2)),
                       W3=one(), W4=one())


def test_siglu_scalar():
    from eidoslab.tokenizer import embed_series

    assert embed_series(np.array([0.0]), _one_dim(0.0)).data[0, 0] == 0.0
    # sin(pi/2) = 1 feeds both the gate and the value
    assert embed_series(np.array([np.pi / 2]), _one_dim(1.0)).data[0, 0] == pytest.approx(0.731059, abs=1e-6)
    assert embed_series(np.array([np.pi / 2]), _one_dim(0.0)).data[0, 0] == pytest.approx(0.5)


def test_zero_weights_zero_embedding(rng):
    from eidoslab.tensor import parameter
    from eidoslab.tokenizer import SiGluParams, embed_series

    z = lambda *s: parameter(np.zeros(s))  # noqa: E731
    params = SiGluParams(W1=z(1, 4), b=z(4), W2=z(4, 3), W3=z(4, 3), W4=z(3, 5))
    assert np.all(embed_series(rng.normal(size=6), params).data == 0.0)


def test_rope_first_band():
    from eidoslab.backbone import rope_rotate

    out = rope_rotate(np.array([[1.0, 0.0, 0.0, 0.0]]), [1]).data[0]
    np.testing.assert_allclose(out[:2], [0.540302, 0.841471], atol=1e-6)
