"""Attention-map analysis: region partitioning, distance profiles, spike pruning.

An attention matrix over a decode state splits into a 3x3 grid of blocks by
query/key region (prefix P, current block C, suffix S).  The suffix-row
output identity H_S = A_SP V_P + A_SC V_C + A_SS V_S recombines the grid
against the unpartitioned product.  Distance profiles aggregate
current-block-to-key attention over samples, aligned at the current-block
start; the spike-pruning experiment removes the highest-attention distant
suffix keys from the live sequence and recomputes attention.
"""

import csv
from dataclasses import dataclass

import numpy as np

from suffixdrop import tensor
from suffixdrop.errors import ShapeError

_REGIONS = ("P", "C", "S")


@dataclass
class AttentionPartition:
    """One head's attention matrix cut into prefix/current/suffix blocks."""

    boundaries: tuple[int, int, int]  # (current start c, suffix start s_b, total)
    blocks: dict[tuple[str, str], np.ndarray]
    layer: int | None = None
    head: int | None = None

    def block(self, query_region: str, key_region: str) -> np.ndarray:
        return self.blocks[(query_region, key_region)]

    def reassemble(self) -> np.ndarray:
        rows = [
            np.concatenate([self.blocks[(q, k)] for k in _REGIONS], axis=1)
            for q in _REGIONS
        ]
        return np.concatenate(rows, axis=0)


def partition(attention, c: int, s_b: int, layer: int | None = None,
              head: int | None = None) -> AttentionPartition:
    """Split a square attention matrix at current start c and suffix start s_b."""
    a = tensor.as_matrix(attention, "attention")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"attention matrix must be square, got {a.shape}")
    if not (0 <= c < s_b <= n):
        raise ValueError(
            f"boundaries must satisfy 0 <= c < s_b <= {n}, got c={c}, s_b={s_b}"
        )
    spans = {"P": (0, c), "C": (c, s_b), "S": (s_b, n)}
    blocks = {
        (q, k): a[qs:qe, ks:ke].copy()
        for q, (qs, qe) in spans.items()
        for k, (ks, ke) in spans.items()
    }
    return AttentionPartition(boundaries=(c, s_b, n), blocks=blocks, layer=layer, head=head)


def suffix_attention_output(part: AttentionPartition, v_prefix, v_current, v_suffix) -> np.ndarray:
    """Suffix-row attention output recombined from the partition blocks:
    A_SP @ V_P + A_SC @ V_C + A_SS @ V_S."""
    vp = tensor.as_matrix(v_prefix, "v_prefix")
    vc = tensor.as_matrix(v_current, "v_current")
    vs = tensor.as_matrix(v_suffix, "v_suffix")
    for name, a_blk, v_blk in (
        ("prefix", part.block("S", "P"), vp),
        ("current", part.block("S", "C"), vc),
        ("suffix", part.block("S", "S"), vs),
    ):
        if a_blk.shape[1] != v_blk.shape[0]:
            raise ShapeError(
                f"{name} value rows {v_blk.shape[0]} != attention columns {a_blk.shape[1]}"
            )
    return (
        tensor.matmul(part.block("S", "P"), vp)
        + tensor.matmul(part.block("S", "C"), vc)
        + tensor.matmul(part.block("S", "S"), vs)
    )


@dataclass
class DistanceProfile:
    """Per-key-distance attention statistics.

    Distances are relative to the suffix boundary: the first suffix key has
    distance 1; current-block and aligned prefix keys have distance <= 0.
    """

    distances: np.ndarray
    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray
    n: np.ndarray
    sample_count: int
    skipped: int = 0

    def row_dicts(self) -> list[dict]:
        return [
            {
                "distance": int(d),
                "mean": float(m),
                "min": float(lo),
                "max": float(hi),
                "n": int(k),
            }
            for d, m, lo, hi, k in zip(self.distances, self.mean, self.min, self.max, self.n)
        ]


def _profile_from_populations(values_by_distance: dict[int, list[float]],
                              sample_count: int, skipped: int) -> DistanceProfile:
    distances = sorted(values_by_distance)
    means, mins, maxs, ns = [], [], [], []
    for d in distances:
        # sorted before reduction: statistics are exactly invariant to the
        # order samples were supplied in
        vals = np.sort(np.asarray(values_by_distance[d], dtype=np.float64))
        means.append(float(vals.mean()))
        mins.append(float(vals[0]))
        maxs.append(float(vals[-1]))
        ns.append(vals.size)
    return DistanceProfile(
        distances=np.asarray(distances, dtype=np.int64),
        mean=np.asarray(means),
        min=np.asarray(mins),
        max=np.asarray(maxs),
        n=np.asarray(ns, dtype=np.int64),
        sample_count=sample_count,
        skipped=skipped,
    )


def _head_stack(attention) -> np.ndarray:
    a = np.asarray(attention, dtype=np.float32)
    if a.ndim == 2:
        a = a[None, :, :]
    if a.ndim != 3:
        raise ShapeError(f"attention sample must be (n, n) or (heads, n, n), got {a.shape}")
    return a


def distance_profile(samples, alignment: int, per_head: bool = False):
    """Aggregate current-block query attention over samples, aligned at c.

    samples: iterable of (attention, c, s_b) with attention (n, n) or
    (heads, n, n).  Per sample, heads and current-block query rows pool to a
    single mean value per key; mean/min/max then run across samples.
    Samples with fewer than `alignment` prefix tokens are skipped and
    counted.  With per_head=True, returns {head index: profile} where
    pooling is over query rows only.
    """
    if alignment < 0:
        raise ValueError(f"alignment must be >= 0, got {alignment}")
    gathered: dict[int, dict[int, list[float]]] = {}
    used = 0
    skipped = 0
    block_span = None
    for attention, c, s_b in samples:
        a = _head_stack(attention)
        n = a.shape[1]
        if not (0 <= c < s_b <= n):
            raise ValueError(f"bad sample boundaries c={c}, s_b={s_b}, n={n}")
        if c < alignment:
            skipped += 1
            continue
        if block_span is None:
            block_span = s_b - c
        elif s_b - c != block_span:
            raise ValueError("all samples must share the same current-block span")
        used += 1
        cols = np.arange(c - alignment, n)
        # (heads, key) pooled over current-block query rows
        pooled_rows = a[:, c:s_b, :].mean(axis=1)
        for col in cols:
            d = int(col - s_b + 1)
            per_key = pooled_rows[:, col]
            if per_head:
                for hi, val in enumerate(per_key):
                    gathered.setdefault(hi, {}).setdefault(d, []).append(float(val))
            else:
                gathered.setdefault(0, {}).setdefault(d, []).append(float(per_key.mean()))
    if per_head:
        return {
            hi: _profile_from_populations(vals, used, skipped)
            for hi, vals in sorted(gathered.items())
        }
    return _profile_from_populations(gathered.get(0, {}), used, skipped)


@dataclass
class SpikePruneResult:
    before: DistanceProfile
    after: DistanceProfile
    pruned_positions: list[int]
    requested_top_n: int
    eligible_count: int
    exclusion_prefix: int

    def to_json_dict(self) -> dict:
        return {
            "pruned_positions": list(self.pruned_positions),
            "requested_top_n": self.requested_top_n,
            "pruned_count": len(self.pruned_positions),
            "eligible_count": self.eligible_count,
            "exclusion_prefix": self.exclusion_prefix,
            "before": self.before.row_dicts(),
            "after": self.after.row_dicts(),
        }


def _suffix_profile_from_forward(out, bs: int, be: int) -> DistanceProfile:
    """Suffix-key profile for one forward: population per key is the
    (layer, head) grid, each pooled over current-block query rows."""
    positions = out.key_positions
    q_rows = np.flatnonzero((out.positions >= bs) & (out.positions < be))
    values: dict[int, list[float]] = {}
    for layer_maps in out.attention:
        pooled = layer_maps[:, q_rows, :].mean(axis=1)  # (heads, keys)
        for col, pos in enumerate(positions):
            if pos < be:
                continue
            d = int(pos - be + 1)
            values.setdefault(d, []).extend(float(v) for v in pooled[:, col])
    return _profile_from_populations(values, sample_count=1, skipped=0)


def spike_prune_experiment(model, state, top_n: int = 10,
                           exclusion_prefix: int = 128) -> SpikePruneResult:
    """Remove the top-N highest-attention suffix keys beyond an exclusion zone.

    Runs one full forward, scores each suffix key by current-to-suffix
    attention pooled over layers, heads, and query rows, prunes the top_n
    eligible keys (distance > exclusion_prefix) from the live sequence,
    reruns the forward, and returns both suffix profiles plus the pruned
    absolute positions.  When fewer keys are eligible than requested, all
    eligible keys are pruned.
    """
    if top_n < 0:
        raise ValueError(f"top_n must be >= 0, got {top_n}")
    bs, be = state.block_bounds(state.current_block)
    all_positions = np.arange(state.total_len, dtype=np.int64)
    out = model.forward(state.tokens, all_positions, capture_attention=True)
    before = _suffix_profile_from_forward(out, bs, be)

    q_rows = np.arange(bs, be)
    score = np.zeros(state.total_len, dtype=np.float64)
    for layer_maps in out.attention:
        score += layer_maps[:, q_rows, :].mean(axis=(0, 1))
    score /= len(out.attention)

    eligible = np.flatnonzero(all_positions >= be + exclusion_prefix)
    n_prune = min(top_n, eligible.size)
    if n_prune:
        order = np.lexsort((eligible, -score[eligible]))  # score desc, position asc
        pruned = np.sort(eligible[order[:n_prune]])
    else:
        pruned = np.empty(0, dtype=np.int64)

    keep = np.setdiff1d(all_positions, pruned)
    out_after = model.forward(state.tokens[keep], keep, capture_attention=True)
    after = _suffix_profile_from_forward(out_after, bs, be)
    return SpikePruneResult(
        before=before,
        after=after,
        pruned_positions=[int(p) for p in pruned],
        requested_top_n=top_n,
        eligible_count=int(eligible.size),
        exclusion_prefix=exclusion_prefix,
    )


def profile_to_csv(profile: DistanceProfile, fh) -> None:
    """Write one row per key distance: distance, mean, min, max, n."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["distance", "mean", "min", "max", "n"])
    for row in profile.row_dicts():
        writer.writerow([row["distance"], repr(row["mean"]), repr(row["min"]),
                         repr(row["max"]), row["n"]])
