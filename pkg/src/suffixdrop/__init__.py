"""Masked-diffusion decoding with windowed distance-decay suffix dropout.

A desk-scale inference engine over a seeded toy transformer: block-wise
denoising with confidence-ranked or threshold-parallel unmasking, a sliding
suffix window with Gaussian distance-decay token dropout (original absolute
positions preserved for rotary encoding), prefix key/value caching, early
termination, attention-map analysis, and operation-count cost accounting.
"""

from suffixdrop.analysis import (
    AttentionPartition,
    DistanceProfile,
    SpikePruneResult,
    distance_profile,
    partition,
    spike_prune_experiment,
    suffix_attention_output,
)
from suffixdrop.cost import (
    CostPrediction,
    CostReport,
    dropout_prediction,
    predict_dropout,
    predict_vanilla,
    reconcile,
    vanilla_prediction,
)
from suffixdrop.decoder import (
    DecodePolicy,
    DecodeTrace,
    SequenceState,
    StepRecord,
    decode,
    diagnostic_loss,
    even_schedule,
    forward_mask,
    snapshot_state,
    step_unmask,
)
from suffixdrop.errors import (
    CacheError,
    ConfigError,
    ReconcileError,
    ShapeError,
    SuffixdropError,
)
from suffixdrop.kernels import backend, compiled_available
from suffixdrop.model import (
    ForwardOutput,
    KVCacheEntry,
    Model,
    ModelConfig,
    extract_prefix_kv,
    init_model,
    load_model,
    save_model,
)
from suffixdrop.suffix import (
    DropoutConfig,
    SuffixPlan,
    expected_density,
    preset,
    preset_names,
    retention_probability,
    sample_plan,
)
from suffixdrop.tensor import (
    RotaryTable,
    apply_rotary,
    matmul,
    rms_norm,
    rotate_rows,
    softmax_rows,
)

__version__ = "0.1.0"
