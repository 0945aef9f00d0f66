import numpy as np
import pytest

from suffixdrop.model import ForwardOutput, ModelConfig, init_model


def triple_loop_matmul(a, b):
    """Independent oracle: literal triple loop, float64 accumulator, k ascending."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    m, kk = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=np.float32)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(kk):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = np.float32(acc)
    return out


class ScriptedModel:
    """Fake model: logits are a fixed one-hot script over absolute positions.

    predict_fn(positions array) -> token id array; the scripted token gets a
    large logit, so its confidence is ~1.0 under any threshold.  Exercises
    the decode loop's control flow (counters, plans, caching, early
    termination) without real attention math.
    """

    def __init__(self, vocab_size, predict_fn, peak=50.0):
        self.vocab_size = vocab_size
        self.predict_fn = predict_fn
        self.peak = peak

    def forward(self, tokens, positions=None, cache=None,
                capture_attention=False, capture_kv=False):
        tokens = np.asarray(tokens, dtype=np.int64)
        if positions is None:
            positions = np.arange(tokens.size)
        positions = np.asarray(positions, dtype=np.int64)
        logits = np.zeros((tokens.size, self.vocab_size), dtype=np.float32)
        predicted = np.asarray(self.predict_fn(positions), dtype=np.int64)
        logits[np.arange(tokens.size), predicted] = self.peak
        if cache:
            key_positions = np.sort(np.concatenate([cache[0].positions, positions]))
        else:
            key_positions = np.sort(positions)
        kv = None
        if capture_kv:
            kv = [(np.zeros((tokens.size, 2), dtype=np.float32),
                   np.zeros((tokens.size, 2), dtype=np.float32))]
        return ForwardOutput(
            logits=logits,
            positions=positions.copy(),
            key_positions=key_positions,
            attention=None,
            kv=kv,
        )


def scripted_constant(vocab_size, token, eos_id=None, eos_span=None, peak=50.0):
    """ScriptedModel predicting `token` everywhere, optionally eos on a span."""

    def predict(positions):
        out = np.full(positions.shape, token, dtype=np.int64)
        if eos_span is not None:
            lo, hi = eos_span
            out[(positions >= lo) & (positions < hi)] = eos_id
        return out

    return ScriptedModel(vocab_size, predict, peak=peak)


@pytest.fixture(scope="session")
def tiny_model():
    """Small real model shared by forward-pass tests."""
    return init_model(ModelConfig(vocab_size=24, dim=32, n_heads=4, n_layers=2, seed=11))


@pytest.fixture(scope="session")
def micro_model():
    """Very small real model for decode-heavy tests."""
    return init_model(ModelConfig(vocab_size=12, dim=16, n_heads=2, n_layers=1, seed=5))
