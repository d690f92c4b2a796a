import math

import numpy as np
import pytest

from medext import tensor as T
from medext.corpus import MASK
from medext.encoder import (
    EncoderConfig,
    attention,
    encode,
    init_params,
    mlm_step,
    plan_masking,
)
from medext.errors import ContractError
from medext.tensor import Tensor


def tiny_config(**overrides):
    base = dict(vocab_size=12, d_model=8, heads=2, layers=1, d_ff=16, max_len=8)
    base.update(overrides)
    return EncoderConfig(**base)


def setup_function(_):
    T.reset_tape()


class TestConfig:
    def test_head_split_arithmetic(self):
        assert tiny_config(d_model=8, heads=2).d_k == 4

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ContractError):
            tiny_config(d_model=9, heads=2)


class TestInitParams:
    def test_same_seed_identical(self):
        config = tiny_config()
        a, b = init_params(config, seed=3), init_params(config, seed=3)
        for key, value in a.named().items():
            assert np.array_equal(value.values, b.named()[key].values)

    def test_shapes_match_config(self):
        config = tiny_config(layers=2)
        params = init_params(config, seed=0)
        assert params.tok_emb.shape == (config.vocab_size, config.d_model)
        assert params.pos_emb.shape == (config.max_len, config.d_model)
        assert params.mlm_proj.shape == (config.d_model, config.vocab_size)
        assert len(params.layers) == 2
        layer = params.layers[0]
        assert layer.w_q.shape == (config.d_model, config.d_model)
        assert layer.ff_w1.shape == (config.d_model, config.d_ff)
        assert np.array_equal(layer.ln1_gain.values, np.ones(config.d_model))
        assert np.array_equal(layer.ff_b1.values, np.zeros(config.d_ff))

    def test_xavier_bounds(self):
        params = init_params(tiny_config(), seed=1)
        limit = math.sqrt(6.0 / (12 + 8))
        assert np.abs(params.tok_emb.values).max() <= limit


class TestAttention:
    def test_single_position_returns_value_row(self):
        rng = np.random.default_rng(0)
        q, k = Tensor(rng.standard_normal((1, 4))), Tensor(rng.standard_normal((1, 4)))
        v = Tensor(rng.standard_normal((1, 6)))
        out = attention(q, k, v)
        assert np.array_equal(out.values, v.values)

    def test_identical_keys_average_values(self):
        q = Tensor(np.ones((2, 4)))
        k = Tensor(np.tile(np.arange(4.0), (2, 1)))  # both key rows identical
        v = Tensor([[2.0, 0.0], [0.0, 4.0]])
        out, weights = attention(q, k, v, return_weights=True)
        assert np.allclose(weights.values, 0.5)
        assert np.allclose(out.values, [[1.0, 2.0], [1.0, 2.0]])

    def test_masked_position_has_no_influence(self):
        rng = np.random.default_rng(1)
        q, k = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 4)))
        v1 = rng.standard_normal((3, 5))
        v2 = v1.copy()
        v2[1] = 99.0  # masked row should not matter
        mask = [True, False, True]
        out1, weights = attention(q, k, Tensor(v1), mask=mask, return_weights=True)
        out2 = attention(q, k, Tensor(v2), mask=mask)
        assert np.array_equal(out1.values, out2.values)
        assert weights.values[:, 1].max() <= 1e-30
        assert np.abs(weights.values.sum(axis=1) - 1.0).max() < 1e-9

    def test_all_masked_rejected(self):
        x = Tensor(np.zeros((2, 2)))
        with pytest.raises(ContractError):
            attention(x, x, x, mask=[False, False])


class TestEncode:
    def test_output_shape(self):
        config = tiny_config()
        params = init_params(config, seed=0)
        h = encode([1, 5, 7], params, config)
        assert h.shape == (3, config.d_model)

    def test_length_error(self):
        config = tiny_config(max_len=4)
        params = init_params(config, seed=0)
        with pytest.raises(ContractError, match="max_len"):
            encode([1] * 5, params, config)

    def test_inference_is_deterministic(self):
        config = tiny_config()
        params = init_params(config, seed=0)
        a = encode([1, 2, 3], params, config)
        b = encode([1, 2, 3], params, config)
        assert np.array_equal(a.values, b.values)

    def test_permutation_equivariance_with_zeroed_positions(self):
        config = tiny_config()
        params = init_params(config, seed=4)
        params.pos_emb.values[:] = 0.0
        ids = [1, 4, 7, 9, 2]
        perm = [3, 0, 4, 2, 1]
        base = encode(ids, params, config).values
        permuted = encode([ids[p] for p in perm], params, config).values
        assert np.abs(permuted - base[perm]).max() < 1e-9

    def test_attention_rows_sum_to_one_across_stack(self):
        config = tiny_config(layers=2)
        params = init_params(config, seed=5)
        sink = []
        encode([1, 2, 3, 4], params, config, attn_sink=sink)
        assert len(sink) == config.layers * config.heads
        for weights in sink:
            assert np.abs(weights.values.sum(axis=1) - 1.0).max() < 1e-9

    def test_dropout_requires_seed(self):
        config = tiny_config(dropout_rate=0.5)
        params = init_params(config, seed=0)
        with pytest.raises(ContractError, match="seed"):
            encode([1, 2], params, config, training=True)
        deterministic = encode([1, 2], params, config, training=True, dropout_seed=9)
        again = encode([1, 2], params, config, training=True, dropout_seed=9)
        assert np.array_equal(deterministic.values, again.values)


class TestPlanMasking:
    def test_count_rule(self):
        rng = np.random.default_rng(0)
        _, positions = plan_masking(list(range(20)), 0.15, 12, rng)
        assert len(positions) == 3  # floor(0.15 * 20)

    def test_at_least_one_position(self):
        rng = np.random.default_rng(0)
        _, positions = plan_masking([5, 6], 0.15, 12, rng)
        assert len(positions) == 1

    def test_corruption_split(self):
        rng = np.random.default_rng(7)
        ids = list(range(4, 24))  # 20 real ids
        corrupted, positions = plan_masking(ids, 0.5, 30, rng)
        k = len(positions)  # 10 selected
        assert k == 10
        masked = [p for j, p in enumerate(positions) if j < int(0.8 * k)]
        assert all(corrupted[p] == MASK for p in masked)
        changed = sum(corrupted[p] != ids[p] for p in positions)
        assert int(0.8 * k) <= changed <= int(0.8 * k) + int(0.1 * k)
        untouched = [i for i in range(len(ids)) if i not in positions]
        assert all(corrupted[i] == ids[i] for i in untouched)


class TestMlmStep:
    def test_untrained_loss_near_uniform(self):
        config = tiny_config(vocab_size=20)
        params = init_params(config, seed=0)
        batch = [[4, 5, 6, 7, 8, 9], [10, 11, 12, 13]]
        loss = mlm_step(batch, params, config, mask_prob=0.3, seed=1).item()
        uniform = math.log(config.vocab_size)
        assert 0.5 * uniform <= loss <= 2.0 * uniform

    def test_same_seed_identical(self):
        config = tiny_config()
        params = init_params(config, seed=0)
        batch = [[4, 5, 6, 7], [8, 9, 10]]
        a = mlm_step(batch, params, config, seed=3).item()
        b = mlm_step(batch, params, config, seed=3).item()
        assert a == b

    def test_empty_batch_rejected(self):
        config = tiny_config()
        with pytest.raises(ContractError):
            mlm_step([], init_params(config, seed=0), config)

    def test_gradient_through_encoder(self):
        config = tiny_config(vocab_size=10, d_model=8, heads=2, layers=1, d_ff=8, max_len=4)
        params = init_params(config, seed=2)
        batch = [[4, 5, 6]]
        err = T.finite_diff_check(
            lambda: mlm_step(batch, params, config, mask_prob=0.4, seed=0),
            list(params.named().values()),
        )
        assert err < 1e-4
