import numpy as np
import pytest

from suffixdrop.errors import CacheError, ConfigError, ShapeError
from suffixdrop.model import (
    ModelConfig,
    extract_prefix_kv,
    init_model,
    load_model,
    save_model,
)


def weight_checksum(model):
    return [float(np.float64(a).sum()) for a in model._weight_arrays()]


class TestInit:
    def test_same_seed_same_weights(self):
        cfg = ModelConfig(vocab_size=16, dim=16, n_heads=2, n_layers=2, seed=99)
        assert weight_checksum(init_model(cfg)) == weight_checksum(init_model(cfg))

    def test_different_seed_different_weights(self):
        kwargs = dict(vocab_size=16, dim=16, n_heads=2, n_layers=2)
        a = init_model(ModelConfig(seed=1, **kwargs))
        b = init_model(ModelConfig(seed=2, **kwargs))
        assert weight_checksum(a) != weight_checksum(b)

    def test_indivisible_dim_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=16, dim=30, n_heads=4, n_layers=1, seed=0)

    def test_odd_head_dim_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=16, dim=12, n_heads=4, n_layers=1, seed=0)

    def test_finite_logits(self, tiny_model):
        out = tiny_model.forward([1, 2, 3, 4, 5])
        assert np.all(np.isfinite(out.logits))
        assert out.logits.shape == (5, tiny_model.config.vocab_size)


class TestForward:
    def test_default_positions_match_explicit(self, tiny_model):
        tokens = [2, 4, 6, 8, 10, 12]
        a = tiny_model.forward(tokens)
        b = tiny_model.forward(tokens, positions=np.arange(6))
        assert np.array_equal(a.logits, b.logits)

    def test_sparse_positions_use_absolute_rotations(self, tiny_model):
        # layer-0 keys of a masked-style token depend only on (token, position),
        # so sparse-run rows must equal dense-run rows at shared positions
        dense_tokens = np.array([3, 4, 5, 6, 7, 8, 9, 10, 11, 12])
        dense = tiny_model.forward(dense_tokens, np.arange(10), capture_kv=True)
        keep = np.array([0, 1, 2, 5, 9])
        sparse = tiny_model.forward(dense_tokens[keep], keep, capture_kv=True)
        dense_k0 = dense.kv[0][0]
        sparse_k0 = sparse.kv[0][0]
        assert np.max(np.abs(sparse_k0 - dense_k0[keep])) < 1e-6

    def test_position_permutation_contract(self, tiny_model):
        rng = np.random.default_rng(0)
        tokens = rng.integers(0, tiny_model.config.vocab_size, 8)
        positions = np.array([0, 2, 3, 7, 11, 12, 20, 21])
        base = tiny_model.forward(tokens, positions)
        perm = rng.permutation(8)
        shuffled = tiny_model.forward(tokens[perm], positions[perm])
        # same (token, position) multiset => same per-position logits
        assert np.array_equal(shuffled.logits, base.logits[perm])

    def test_attention_rows_stochastic(self, tiny_model):
        out = tiny_model.forward([1, 2, 3, 4, 5, 6, 7], capture_attention=True)
        assert len(out.attention) == tiny_model.config.n_layers
        for layer_maps in out.attention:
            sums = layer_maps.astype(np.float64).sum(axis=2)
            assert np.max(np.abs(sums - 1.0)) < 1e-6

    def test_duplicate_positions_rejected(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.forward([1, 2, 3], positions=[0, 1, 1])

    def test_token_out_of_vocab_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model.forward([0, tiny_model.config.vocab_size])


class TestKVCache:
    def test_empty_prefix_gives_empty_set(self, tiny_model):
        out = tiny_model.forward([1, 2, 3], capture_kv=True)
        assert extract_prefix_kv(out, 0) == []

    def test_prefix_positions_bookkeeping(self, tiny_model):
        out = tiny_model.forward([1, 2, 3, 4, 5, 6], capture_kv=True)
        entries = extract_prefix_kv(out, 4)
        assert len(entries) == tiny_model.config.n_layers
        for li, entry in enumerate(entries):
            assert entry.layer == li
            assert np.array_equal(entry.positions, np.arange(4))
            assert entry.keys.shape == (4, tiny_model.config.dim)
            assert entry.values.shape == (4, tiny_model.config.dim)

    def test_range_outside_live_positions(self, tiny_model):
        out = tiny_model.forward([1, 2, 3], positions=[4, 5, 6], capture_kv=True)
        with pytest.raises(ValueError):
            extract_prefix_kv(out, 2)

    def test_capture_required(self, tiny_model):
        out = tiny_model.forward([1, 2, 3])
        with pytest.raises(ValueError):
            extract_prefix_kv(out, 2)

    def test_same_step_cache_matches_dense(self, tiny_model):
        rng = np.random.default_rng(5)
        tokens = rng.integers(0, tiny_model.config.vocab_size, 12)
        dense = tiny_model.forward(tokens, np.arange(12), capture_kv=True)
        cache = extract_prefix_kv(dense, 5)
        cached = tiny_model.forward(tokens[5:], np.arange(5, 12), cache=cache)
        # algebraically identical; tolerance covers accumulation-order drift
        assert np.max(np.abs(cached.logits - dense.logits[5:])) < 1e-5

    def test_cached_forward_is_bit_exact_here(self, tiny_model):
        # with keys merged in ascending-position order the cached path
        # reproduces the dense accumulation sequence exactly
        rng = np.random.default_rng(6)
        tokens = rng.integers(0, tiny_model.config.vocab_size, 10)
        dense = tiny_model.forward(tokens, np.arange(10), capture_kv=True)
        cache = extract_prefix_kv(dense, 4)
        cached = tiny_model.forward(tokens[4:], np.arange(4, 10), cache=cache)
        assert np.array_equal(cached.logits, dense.logits[4:])

    def test_overlap_between_cache_and_live_rejected(self, tiny_model):
        out = tiny_model.forward([1, 2, 3, 4], capture_kv=True)
        cache = extract_prefix_kv(out, 2)
        with pytest.raises(CacheError):
            tiny_model.forward([5, 6, 7], positions=[1, 4, 5], cache=cache)

    def test_incomplete_layer_coverage_rejected(self, tiny_model):
        out = tiny_model.forward([1, 2, 3, 4], capture_kv=True)
        cache = extract_prefix_kv(out, 2)[:1]
        with pytest.raises(CacheError):
            tiny_model.forward([5, 6], positions=[4, 5], cache=cache)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, tiny_model):
        path = tmp_path / "model.ckpt"
        save_model(tiny_model, path)
        loaded = load_model(path)
        assert loaded.config == tiny_model.config
        for a, b in zip(tiny_model._weight_arrays(), loaded._weight_arrays()):
            assert np.array_equal(a, b)
        tokens = [1, 2, 3, 4]
        assert np.array_equal(
            loaded.forward(tokens).logits, tiny_model.forward(tokens).logits
        )

    def test_truncated_file_rejected(self, tmp_path, tiny_model):
        path = tmp_path / "model.ckpt"
        save_model(tiny_model, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ConfigError):
            load_model(path)
