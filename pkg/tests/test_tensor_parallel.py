from fractions import Fraction

import numpy as np
import pytest

from ringseq import (
    AttentionConfig,
    ConfigError,
    make_rng,
    mlp_forward,
    multi_head_forward,
    random_attention_weights,
    random_mlp_weights,
    split_attention_heads,
    split_mlp_weights,
    tensor_parallel_attention,
    tensor_parallel_mlp,
    validate_tensor_parallel,
)


def config_for(n, z=4, a=2, b=2, seq=8):
    return AttentionConfig(
        batch_size=b, seq_len=seq, hidden_size=z * a, num_heads=z, head_size=a, num_devices=n
    )


class TestWeightSplits:
    def test_mlp_shards_reconstruct_bitwise(self):
        rng = make_rng(1)
        w = random_mlp_weights(4, rng)
        shards = split_mlp_weights(w, 4)
        assert np.array_equal(np.concatenate(shards.up_columns, axis=1), w.up)
        assert np.array_equal(np.concatenate(shards.down_rows, axis=0), w.down)

    def test_mlp_split_rejects_indivisible_width(self):
        w = random_mlp_weights(4, make_rng(2))  # width 16
        with pytest.raises(ConfigError, match="not divisible"):
            split_mlp_weights(w, 3)

    def test_head_shards_take_whole_head_slices(self):
        cfg = config_for(2)
        rng = make_rng(3)
        w = random_attention_weights(cfg, rng)
        shards = split_attention_heads(w, cfg, 2)
        # Heads 0-1 (channels 0..3) on device 0, heads 2-3 (channels 4..7) on device 1.
        assert np.array_equal(shards[0].wq, w.wq[:, :4])
        assert np.array_equal(shards[1].wq, w.wq[:, 4:])
        assert np.array_equal(shards[0].wo, w.wo[:4, :])
        assert np.array_equal(shards[1].wo, w.wo[4:, :])
        assert np.array_equal(np.concatenate([s.wk for s in shards], axis=1), w.wk)

    def test_head_split_rejects_indivisible_heads(self):
        cfg = config_for(1, z=4)
        w = random_attention_weights(cfg, make_rng(4))
        with pytest.raises(ConfigError, match="num_heads=4 not divisible"):
            split_attention_heads(w, cfg, 3)


class TestTensorParallelMlp:
    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_matches_reference(self, n):
        cfg = config_for(n, z=8, a=2, seq=8)
        rng = make_rng(10 + n)
        x = rng.standard_normal((cfg.batch_size, cfg.seq_len, cfg.hidden_size))
        w = random_mlp_weights(cfg.hidden_size, rng)
        got, ledger = tensor_parallel_mlp(x, w, cfg)
        assert np.max(np.abs(got - mlp_forward(x, w))) <= 1e-12
        want_cost = Fraction(
            2 * x.size * (n - 1), n
        )
        for traffic in ledger.devices:
            assert traffic.allreduce_elements == want_cost
            assert traffic.ring_p2p_elements == 0

    def test_single_device_bitwise(self):
        cfg = config_for(1)
        rng = make_rng(20)
        x = rng.standard_normal((2, 8, 8))
        w = random_mlp_weights(8, rng)
        got, _ = tensor_parallel_mlp(x, w, cfg)
        assert np.array_equal(got, mlp_forward(x, w))


class TestTensorParallelAttention:
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_matches_reference(self, n):
        cfg = config_for(n)
        rng = make_rng(30 + n)
        x = rng.standard_normal((cfg.batch_size, cfg.seq_len, cfg.hidden_size))
        w = random_attention_weights(cfg, rng)
        got, ledger = tensor_parallel_attention(x, w, cfg)
        want = multi_head_forward(x, w, cfg)
        assert np.max(np.abs(got - want)) <= 1e-12
        want_cost = Fraction(2 * x.size * (n - 1), n)
        for traffic in ledger.devices:
            assert traffic.allreduce_elements == want_cost

    def test_rejects_head_count_not_divisible(self):
        cfg = AttentionConfig(
            batch_size=1, seq_len=6, hidden_size=6, num_heads=3, head_size=2, num_devices=2
        )
        w = random_attention_weights(cfg, make_rng(5))
        with pytest.raises(ConfigError, match="num_heads=3 not divisible by num_devices=2"):
            tensor_parallel_attention(np.zeros((1, 6, 6)), w, cfg)

    def test_divisor_scan_accepts_exactly_head_divisors(self):
        # Z = 6 heads: device counts 1, 2, 3, 6 work; everything else is rejected.
        base_kwargs = dict(batch_size=1, seq_len=24, hidden_size=12, num_heads=6, head_size=2)
        rng = make_rng(6)
        x = rng.standard_normal((1, 24, 12))
        cfg1 = AttentionConfig(**base_kwargs, num_devices=1)
        w = random_attention_weights(cfg1, rng)
        want = multi_head_forward(x, w, cfg1)
        for n in range(1, 7):
            if 24 % n != 0:
                with pytest.raises(ConfigError):
                    AttentionConfig(**base_kwargs, num_devices=n)
                continue
            cfg = AttentionConfig(**base_kwargs, num_devices=n)
            if 6 % n == 0:
                got, _ = tensor_parallel_attention(x, w, cfg)
                assert np.max(np.abs(got - want)) <= 1e-12
            else:
                with pytest.raises(ConfigError):
                    tensor_parallel_attention(x, w, cfg)

    def test_validate_helper_flags_feed_forward_width(self):
        cfg = AttentionConfig(
            batch_size=1, seq_len=8, hidden_size=2, num_heads=2, head_size=1, num_devices=8
        )
        # 4H = 8 is divisible by 8 but Z = 2 is not.
        with pytest.raises(ConfigError):
            validate_tensor_parallel(cfg)
