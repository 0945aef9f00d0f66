"""Seeded random-weight bidirectional transformer over integer token ids.

The model maps a (partially masked) token sequence to per-position vocabulary
logits.  Positions are always supplied as absolute indices and drive the
rotary encoding directly, so a pruned, non-contiguous subset of a sequence
sees exactly the same angles as the dense sequence.  Cached key/value rows
for absent positions can be injected as extra attendable entries.

Weights are never trained; a fixed (config, seed) pair regenerates them bit
for bit.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from suffixdrop import tensor
from suffixdrop.errors import CacheError, ConfigError, ShapeError

_CHECKPOINT_FORMAT = "suffixdrop-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int
    n_heads: int
    n_layers: int
    seed: int
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.dim < 1 or self.n_heads < 1 or self.n_layers < 1:
            raise ConfigError("dim, n_heads and n_layers must be >= 1")
        if self.dim % self.n_heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if (self.dim // self.n_heads) % 2 != 0:
            raise ConfigError(
                f"head_dim {self.dim // self.n_heads} must be even for rotary pairs"
            )

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads


@dataclass
class KVCacheEntry:
    """Per-layer cached key/value rows, tagged with absolute positions.

    Keys are stored post-rotary; values are raw.  Rows are sorted by
    position.
    """

    layer: int
    positions: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.positions.size and np.any(np.diff(self.positions) <= 0):
            raise CacheError("cache positions must be strictly increasing")
        if self.keys.shape[0] != self.positions.size or self.values.shape[0] != self.positions.size:
            raise CacheError("cache key/value row counts must equal position count")


@dataclass
class ForwardOutput:
    logits: np.ndarray                 # (n_live, vocab), rows in input order
    positions: np.ndarray              # live absolute positions, input order
    key_positions: np.ndarray          # attended positions, ascending
    attention: list[np.ndarray] | None = None   # per layer: (heads, n_live, n_keys)
    kv: list[tuple[np.ndarray, np.ndarray]] | None = None  # per layer live (K, V)


@dataclass
class _LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


class Model:
    """Pre-norm transformer: RMS norm, rotary attention, 4x GELU feed-forward.

    Immutable after construction; forward() is reentrant.
    """

    def __init__(self, config: ModelConfig, _weights=None):
        self.config = config
        self.rotary = tensor.RotaryTable(config.head_dim, config.rope_base)
        if _weights is not None:
            self.embed, self.out_proj, self.layers = _weights
            return
        rng = np.random.default_rng(config.seed)
        scale = np.float32(1.0 / np.sqrt(config.dim))

        def draw(*shape):
            return rng.standard_normal(shape, dtype=np.float32) * scale

        d = config.dim
        self.embed = draw(config.vocab_size, d)
        self.out_proj = draw(d, config.vocab_size)
        self.layers = [
            _LayerWeights(
                wq=draw(d, d),
                wk=draw(d, d),
                wv=draw(d, d),
                wo=draw(d, d),
                w1=draw(d, 4 * d),
                w2=draw(4 * d, d),
            )
            for _ in range(config.n_layers)
        ]

    def _weight_arrays(self) -> list[np.ndarray]:
        arrays = [self.embed, self.out_proj]
        for lw in self.layers:
            arrays.extend([lw.wq, lw.wk, lw.wv, lw.wo, lw.w1, lw.w2])
        return arrays

    def _validate_cache(self, cache, positions):
        if not cache:
            return None
        by_layer = {}
        for entry in cache:
            if entry.layer in by_layer:
                raise CacheError(f"duplicate cache entry for layer {entry.layer}")
            by_layer[entry.layer] = entry
        if sorted(by_layer) != list(range(self.config.n_layers)):
            raise CacheError(
                f"cache must cover layers 0..{self.config.n_layers - 1}, got {sorted(by_layer)}"
            )
        ref = by_layer[0].positions
        for entry in by_layer.values():
            if not np.array_equal(entry.positions, ref):
                raise CacheError("cache entries must share one position set across layers")
        if np.intersect1d(ref, positions).size:
            overlap = np.intersect1d(ref, positions)
            raise CacheError(f"cached positions overlap live positions: {overlap.tolist()}")
        return [by_layer[i] for i in range(self.config.n_layers)]

    def forward(
        self,
        tokens,
        positions=None,
        cache=None,
        capture_attention: bool = False,
        capture_kv: bool = False,
    ) -> ForwardOutput:
        """Bidirectional attention over live tokens plus any cached entries.

        Rotary angles come from the supplied absolute positions, never from
        array offsets.  Per-token outputs depend only on the attendable
        multiset of (token, position) pairs, not on input order: attention
        keys are merged in ascending-position order internally.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if positions is None:
            positions = np.arange(tokens.size, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.int64)
        if tokens.ndim != 1 or positions.shape != tokens.shape:
            raise ShapeError("tokens and positions must be 1-D and the same length")
        if tokens.size == 0:
            raise ShapeError("forward requires at least one live token")
        if np.unique(positions).size != positions.size or positions.min() < 0:
            raise ShapeError("positions must be distinct and non-negative")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise ValueError("token id out of vocabulary range")
        cache = self._validate_cache(cache, positions)

        cfg = self.config
        n = tokens.size
        hd = cfg.head_dim
        if cache is not None:
            all_pos = np.concatenate([cache[0].positions, positions])
        else:
            all_pos = positions
        key_order = np.argsort(all_pos, kind="stable")
        key_positions = all_pos[key_order]
        scale = np.float32(1.0 / np.sqrt(hd))

        x = self.embed[tokens]
        attention_records = [] if capture_attention else None
        kv_records = [] if capture_kv else None

        for li, lw in enumerate(self.layers):
            h = tensor.rms_norm(x)
            q = tensor.matmul(h, lw.wq)
            k = tensor.matmul(h, lw.wk)
            v = tensor.matmul(h, lw.wv)
            for hi in range(cfg.n_heads):
                s = hi * hd
                q[:, s : s + hd] = tensor.rotate_rows(q[:, s : s + hd], positions, self.rotary)
                k[:, s : s + hd] = tensor.rotate_rows(k[:, s : s + hd], positions, self.rotary)
            if capture_kv:
                kv_records.append((k.copy(), v.copy()))
            if cache is not None:
                keys_all = np.concatenate([cache[li].keys, k])[key_order]
                values_all = np.concatenate([cache[li].values, v])[key_order]
            else:
                keys_all = k[key_order]
                values_all = v[key_order]

            ctx = np.empty((n, cfg.dim), dtype=np.float32)
            head_maps = [] if capture_attention else None
            for hi in range(cfg.n_heads):
                s = hi * hd
                qh = q[:, s : s + hd]
                kh = np.ascontiguousarray(keys_all[:, s : s + hd].T)
                scores = tensor.matmul(qh, kh)
                scores *= scale
                probs = tensor.softmax_rows(scores)
                if capture_attention:
                    head_maps.append(probs)
                ctx[:, s : s + hd] = tensor.matmul(probs, values_all[:, s : s + hd])
            if capture_attention:
                attention_records.append(np.stack(head_maps))
            x = x + tensor.matmul(ctx, lw.wo)
            h2 = tensor.rms_norm(x)
            x = x + tensor.matmul(tensor.gelu(tensor.matmul(h2, lw.w1)), lw.w2)

        logits = tensor.matmul(tensor.rms_norm(x), self.out_proj)
        return ForwardOutput(
            logits=logits,
            positions=positions.copy(),
            key_positions=key_positions.copy(),
            attention=attention_records,
            kv=kv_records,
        )


def init_model(config: ModelConfig) -> Model:
    """Build a model with deterministic seeded weights (scale 1/sqrt(dim))."""
    return Model(config)


def extract_prefix_kv(output: ForwardOutput, prefix_end: int) -> list[KVCacheEntry]:
    """Per-layer cached K/V rows for absolute positions [0, prefix_end).

    The forward must have run with capture_kv=True and all prefix positions
    live.  An empty prefix yields an empty cache set.
    """
    if output.kv is None:
        raise ValueError("forward was not run with capture_kv=True")
    if prefix_end <= 0:
        return []
    want = np.arange(prefix_end, dtype=np.int64)
    sel = np.flatnonzero(output.positions < prefix_end)
    got = output.positions[sel]
    order = np.argsort(got, kind="stable")
    if not np.array_equal(got[order], want):
        raise ValueError(
            f"prefix range [0, {prefix_end}) not covered by live positions"
        )
    sel = sel[order]
    return [
        KVCacheEntry(layer=li, positions=want.copy(), keys=k[sel].copy(), values=v[sel].copy())
        for li, (k, v) in enumerate(output.kv)
    ]


def save_model(model: Model, path) -> None:
    """Write a checkpoint: JSON header (config) + flat float32 weight data."""
    header = json.dumps(
        {"format": _CHECKPOINT_FORMAT, "config": asdict(model.config)},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in model._weight_arrays():
            fh.write(np.ascontiguousarray(arr, dtype=np.float32).tobytes())


def load_model(path) -> Model:
    """Restore a checkpoint bit for bit."""
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format") != _CHECKPOINT_FORMAT:
            raise ConfigError(f"unrecognized checkpoint format: {header.get('format')!r}")
        config = ModelConfig(**header["config"])
        data = np.frombuffer(fh.read(), dtype=np.float32)

    d = config.dim
    shapes = [(config.vocab_size, d), (d, config.vocab_size)]
    for _ in range(config.n_layers):
        shapes.extend([(d, d)] * 4 + [(d, 4 * d), (4 * d, d)])
    total = sum(r * c for r, c in shapes)
    if data.size != total:
        raise ConfigError(
            f"checkpoint holds {data.size} floats but config implies {total}"
        )
    arrays = []
    offset = 0
    for r, c in shapes:
        arrays.append(data[offset : offset + r * c].reshape(r, c).copy())
        offset += r * c
    embed, out_proj = arrays[0], arrays[1]
    layers = [
        _LayerWeights(*arrays[2 + 6 * i : 8 + 6 * i]) for i in range(config.n_layers)
    ]
    return Model(config, _weights=(embed, out_proj, layers))
