# pragma pylint: disable=missing-docstring,C0103
import math

import numpy as np
import pytest

from gexse.encoder import (
    DEFAULT_CONFIGS, EncoderConfig, FFCLayerParams, classification_head, config_for, encode,
    embedding_head, encoder_forward, ffc_forward, init_ffc, init_params, init_pmb,
    load_checkpoint, parameter_census, pmb_forward, save_checkpoint, stem_channel_energy,
    stem_forward
)
from gexse.misc import ConfigError, DataError, ShapeError, make_rng
from gexse.tensor import (
    ComplexSpectrum, NormState, Tensor, batch_norm1d, concat_channels, conv1d,
    global_avg_pool, inverse_real_fft, no_grad, real_fft, relu, softmax_cross_entropy,
    split_channels
)
from gexse.tensor.gradcheck import gradcheck
from gexse.tensor.tree import map_leaves, named_parameters, state_arrays


def zeroed(tree):
    return map_leaves(tree, lambda name, leaf: Tensor(np.zeros(leaf.shape), requires_grad=True)
                      if isinstance(leaf, Tensor) else leaf)


def test_ffc_zero_input_gives_zero(rng):
    layer = init_ffc(3, 3, make_rng(0, 'weights'))
    out = ffc_forward(Tensor(np.zeros((2, 3, 8))), layer, training=True)
    assert out.shape == (2, 3, 8)
    assert np.array_equal(out.data, np.zeros((2, 3, 8)))


def test_ffc_identity_reconstructs_sinusoid():
    channels, length = 2, 16
    t = np.arange(length)
    x = np.stack([np.cos(2 * np.pi * 3 * t / length), 0.5 + np.cos(2 * np.pi * t / length)])
    stacked = 2 * channels
    layer = FFCLayerParams(
        kernel=Tensor(np.eye(stacked)[:, :, None]),
        bias=Tensor(np.zeros(stacked)),
        gamma=Tensor(np.ones(stacked)),
        beta=Tensor(np.zeros(stacked)),
        # running var + eps == 1 makes eval-mode batch norm the identity
        norm=NormState(np.zeros(stacked), np.full(stacked, 1.0 - 1e-5)),
    )
    out = ffc_forward(Tensor(x[None]), layer, training=False)
    assert np.max(np.abs(out.data[0] - x)) < 1e-6


def test_ffc_matches_step_by_step_composition(rng):
    layer = init_ffc(3, 5, make_rng(1, 'weights'))
    layer = layer._replace(norm=NormState(rng.standard_normal(6), rng.uniform(0.5, 2.0, 6)))
    x = Tensor(rng.standard_normal((2, 3, 10)))

    spectrum = real_fft(x)
    stacked = concat_channels([spectrum.real, spectrum.imag])
    mixed = conv1d(stacked, layer.kernel, layer.bias, padding=2)
    mixed = relu(batch_norm1d(mixed, layer.gamma, layer.beta, layer.norm.copy(), False))
    real, imag = split_channels(mixed, [3, 3])
    expected = inverse_real_fft(ComplexSpectrum(real, imag, 10))

    assert np.array_equal(ffc_forward(x, layer, training=False).data, expected.data)


def test_ffc_channel_mismatch():
    layer = init_ffc(3, 1, make_rng(0, 'weights'))
    with pytest.raises(ShapeError):
        ffc_forward(Tensor(np.zeros((1, 4, 8))), layer, training=False)


def test_pmb_preserves_shape(rng):
    block = init_pmb(16, (1, 3, 5), make_rng(0, 'weights'))
    out = pmb_forward(Tensor(rng.standard_normal((2, 16, 32))), block, training=True)
    assert out.shape == (2, 16, 32)


def test_pmb_zero_weights(rng):
    block = zeroed(init_pmb(8, (1, 3, 5), make_rng(0, 'weights')))
    out = pmb_forward(Tensor(rng.standard_normal((2, 8, 6))), block, training=True)
    assert np.array_equal(out.data, np.zeros((2, 8, 6)))


def test_pmb_width_not_divisible():
    with pytest.raises(ConfigError):
        init_pmb(6, (1, 3, 5), make_rng(0, 'weights'))


def test_pmb_input_gradient(rng):
    block = init_pmb(4, (1, 3, 5), make_rng(2, 'weights'))
    block = map_leaves(block, lambda name, leaf: NormState(
        rng.standard_normal(leaf.running_mean.shape) * 0.1, np.ones(leaf.running_var.shape))
        if isinstance(leaf, NormState) else leaf)
    x = rng.standard_normal((1, 4, 6))
    result = gradcheck(lambda t: pmb_forward(t, block, training=False).sum(), [x])
    assert result.passed, result.errors


def test_encoder_output_shapes(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=0)
    x = Tensor(rng.standard_normal((3, tiny_cfg.in_channels, tiny_cfg.window_length)))
    logits, embedding, trace = encoder_forward(x, params, tiny_cfg, training=True)
    assert logits.shape == (3, tiny_cfg.num_classes)
    assert embedding.shape == (3, tiny_cfg.embed_dim)
    assert trace.stem.shape == (3, tiny_cfg.width, tiny_cfg.window_length)
    assert trace.pooled.shape == (3, tiny_cfg.width)
    assert trace.inputs is x


@pytest.mark.parametrize('dataset_id', ['ucihar', 'pamap2', 'opportunity'])
def test_encoder_default_config_shapes(dataset_id, rng):
    cfg = DEFAULT_CONFIGS[dataset_id]
    params = init_params(cfg, seed=0)
    x = Tensor(rng.standard_normal((2, cfg.in_channels, cfg.window_length)))
    with no_grad():
        logits, embedding, _ = encoder_forward(x, params, cfg, training=False)
    assert logits.shape == (2, cfg.num_classes)
    assert embedding.shape == (2, 64)


def test_encoder_single_block_has_no_residual(tiny_cfg, rng):
    cfg = tiny_cfg._replace(n_blocks=1)
    params = init_params(cfg, seed=3)
    x = Tensor(rng.standard_normal((2, cfg.in_channels, cfg.window_length)))
    logits, embedding, _ = encoder_forward(x, params, cfg, training=False)

    stem = stem_forward(x, params, training=False)
    pooled = global_avg_pool(pmb_forward(stem, params.blocks[0], training=False))
    assert np.array_equal(logits.data,
                          classification_head(pooled, params.classifier, training=False).data)
    assert np.array_equal(embedding.data, embedding_head(pooled, params.embedder).data)


def test_encoder_two_blocks_use_residual(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=3)
    x = Tensor(rng.standard_normal((2, tiny_cfg.in_channels, tiny_cfg.window_length)))
    logits, _, _ = encoder_forward(x, params, tiny_cfg, training=False)

    first = pmb_forward(stem_forward(x, params, False), params.blocks[0], False)
    second = relu(pmb_forward(first, params.blocks[1], False) + first)
    expected = classification_head(global_avg_pool(second), params.classifier, False)
    assert np.array_equal(logits.data, expected.data)


def test_encoder_batch_permutation(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=0)
    x = rng.standard_normal((4, tiny_cfg.in_channels, tiny_cfg.window_length))
    order = np.array([2, 0, 3, 1])
    logits, embedding, _ = encoder_forward(Tensor(x), params, tiny_cfg, training=False)
    p_logits, p_embedding, _ = encoder_forward(Tensor(x[order]), params, tiny_cfg, training=False)
    assert np.allclose(p_logits.data, logits.data[order], atol=1e-12)
    assert np.allclose(p_embedding.data, embedding.data[order], atol=1e-12)


def test_encoder_eval_is_pure(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=0)
    before = {name: value.copy() for name, value in state_arrays(params).items()}
    x = Tensor(rng.standard_normal((2, tiny_cfg.in_channels, tiny_cfg.window_length)))
    first, _, _ = encoder_forward(x, params, tiny_cfg, training=False)
    second, _, _ = encoder_forward(x, params, tiny_cfg, training=False)
    assert np.array_equal(first.data, second.data)
    for name, value in state_arrays(params).items():
        assert np.array_equal(value, before[name])


def test_encoder_training_updates_running_stats(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=0)
    x = Tensor(rng.standard_normal((2, tiny_cfg.in_channels, tiny_cfg.window_length)))
    encoder_forward(x, params, tiny_cfg, training=True)
    assert not np.array_equal(params.stem_ffc.norm.running_mean, np.zeros(2 * tiny_cfg.width))


def test_encoder_shape_mismatch(tiny_cfg):
    params = init_params(tiny_cfg, seed=0)
    with pytest.raises(ShapeError, match='Encoder expects'):
        encoder_forward(Tensor(np.zeros((1, tiny_cfg.in_channels + 1, tiny_cfg.window_length))),
                        params, tiny_cfg, training=False)


def test_init_params_deterministic(tiny_cfg):
    first = state_arrays(init_params(tiny_cfg, seed=7))
    second = state_arrays(init_params(tiny_cfg, seed=7))
    other = state_arrays(init_params(tiny_cfg, seed=8))
    assert all(np.array_equal(first[name], second[name]) for name in first)
    assert not np.array_equal(first['stem_ffc.kernel'], other['stem_ffc.kernel'])


def test_classification_head_zero_weights_uniform(tiny_cfg, rng):
    head = zeroed(init_params(tiny_cfg, seed=0).classifier)
    logits = classification_head(Tensor(rng.standard_normal((3, tiny_cfg.width))), head, True)
    assert logits.shape == (3, tiny_cfg.num_classes)
    loss = softmax_cross_entropy(logits, np.eye(tiny_cfg.num_classes)[[0, 1, 2]])
    assert abs(loss.item() - math.log(tiny_cfg.num_classes)) < 1e-12


def test_classification_head_gradcheck(tiny_cfg, rng):
    head = init_params(tiny_cfg, seed=0).classifier
    head = head._replace(ffc=head.ffc._replace(norm=NormState(np.zeros(2), np.ones(2))))
    result = gradcheck(lambda t: classification_head(t, head, training=False),
                       [rng.standard_normal((2, tiny_cfg.width))])
    assert result.passed, result.errors


def test_embedding_head(tiny_cfg, rng):
    pooled = rng.standard_normal((3, tiny_cfg.width))
    head = zeroed(init_params(tiny_cfg, seed=0).embedder)
    assert np.array_equal(embedding_head(Tensor(pooled), head).data, np.zeros((3, 5)))

    square = head._replace(w=Tensor(np.eye(tiny_cfg.width)), b=Tensor(np.zeros(tiny_cfg.width)))
    assert np.array_equal(embedding_head(Tensor(pooled), square).data, pooled)

    head = init_params(tiny_cfg, seed=0).embedder
    assert gradcheck(lambda t: embedding_head(t, head), [pooled]).passed


def test_parameter_census_pamap2():
    census = parameter_census(init_params(DEFAULT_CONFIGS['pamap2'], seed=0))
    assert census['total'] == 5605214
    assert abs(census['total'] - 6392693) / 6392693 < 0.15
    assert census['block_1'] == census['block_2']
    assert census['total'] == sum(v for k, v in census.items() if k != 'total')


def test_parameter_census_matches_tensors(tiny_cfg):
    params = init_params(tiny_cfg, seed=0)
    assert parameter_census(params)['total'] == sum(t.size for _, t in named_parameters(params))


def test_encode_matches_forward(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=0)
    windows = rng.standard_normal((5, tiny_cfg.in_channels, tiny_cfg.window_length))
    logits, embeddings = encode(params, tiny_cfg, windows, batch_size=2)
    expected, expected_embedding, _ = encoder_forward(Tensor(windows), params, tiny_cfg, False)
    assert np.allclose(logits, expected.data, atol=1e-12)
    assert np.allclose(embeddings, expected_embedding.data, atol=1e-12)


def test_checkpoint_round_trip(tiny_cfg, tmp_path, rng):
    params = init_params(tiny_cfg, seed=0)
    x = Tensor(rng.standard_normal((2, tiny_cfg.in_channels, tiny_cfg.window_length)))
    encoder_forward(x, params, tiny_cfg, training=True)
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(path, params, tiny_cfg, {'label_names': ['a', 'b', 'c', 'd'], 'seed': 0})

    loaded, cfg, header = load_checkpoint(path)
    assert cfg == tiny_cfg
    assert header['label_names'] == ['a', 'b', 'c', 'd']
    original, restored = state_arrays(params), state_arrays(loaded)
    assert list(original) == list(restored)
    for name in original:
        assert np.array_equal(original[name], restored[name])
    first, _, _ = encoder_forward(x, params, tiny_cfg, training=False)
    second, _, _ = encoder_forward(x, loaded, cfg, training=False)
    assert np.array_equal(first.data, second.data)


def test_checkpoint_wrong_magic(tmp_path):
    path = tmp_path / 'model.ckpt'
    path.write_bytes(b'NOTACKPT' + bytes(16))
    with pytest.raises(DataError):
        load_checkpoint(str(path))


def test_stem_channel_energy(tiny_cfg, rng):
    params = init_params(tiny_cfg, seed=0)
    window = rng.standard_normal((tiny_cfg.in_channels, tiny_cfg.window_length))
    window[1] = 0.0
    energy = stem_channel_energy(params, tiny_cfg, window)
    assert energy.shape == (tiny_cfg.in_channels,)
    assert np.all(energy >= 0)
    assert energy[1] < 1e-20
    assert energy[0] > 1e-6


def test_config_for_overrides():
    cfg = config_for('ucihar', {'encoder': {'width': 32, 'n_blocks': 3}, 'teacher_dim': 16})
    assert cfg.width == 32
    assert cfg.n_blocks == 3
    assert cfg.embed_dim == 16
    assert cfg.in_channels == 9

    cfg = config_for('pamap2', {'encoder': {'width': None}}, in_channels=40)
    assert cfg.width == 128
    assert cfg.in_channels == 40

    with pytest.raises(ConfigError):
        config_for('ucihar', {'encoder': {'width': 30}})
    with pytest.raises(ConfigError):
        config_for('unknown', {})


def test_encoder_config_rejects_even_kernel(tiny_cfg):
    with pytest.raises(ConfigError):
        init_params(tiny_cfg._replace(stem_kernel_size=4), seed=0)
    with pytest.raises(ConfigError):
        init_params(EncoderConfig(3, 16, 4, width=8, n_blocks=0), seed=0)
