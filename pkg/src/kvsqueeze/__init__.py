"""2-D KV-cache compression planner.

Profiles per-layer importance from pre/post-attention cosine similarity,
clusters layers into three groups, reallocates per-layer token budgets,
and simulates decode with sequence-wise eviction policies under exact
memory accounting.
"""

from .errors import (
    AllocationError,
    BudgetFloorError,
    ByteOverflowError,
    ConfigError,
    DegenerateTraceError,
    KvSqueezeError,
    TraceFormatError,
    UnsupportedModelError,
)
from .eviction import POLICY_KINDS, EvictionPolicy, accumulate_scores, evict
from .grouping import BudgetPlan, LayerGroups, allocate_budgets, cluster_layers
from .kvmodel import (
    KvCacheState,
    LayerCache,
    ModelShape,
    SimConfig,
    config_from_dict,
    config_to_dict,
    crossover_tokens,
    kv_cache_bytes,
    kv_cache_bytes_actual,
    load_config,
    per_token_bytes,
)
from .profiling import CompactTrace, CosineProfile, PrefillTrace, cosine_similarity, profile_layers
from .simulator import (
    SIM_MODES,
    PrefillResult,
    SimReport,
    StepRecord,
    ToyDecoder,
    ToyModelSpec,
    attention_mass_retained,
    make_planted_trace,
    random_prompt,
    rms_norm,
    simulate_decode,
    toy_prefill,
)
from .traceio import load_trace, save_trace

__version__ = "0.1.0"

__all__ = [
    "AllocationError",
    "BudgetFloorError",
    "ByteOverflowError",
    "ConfigError",
    "DegenerateTraceError",
    "KvSqueezeError",
    "TraceFormatError",
    "UnsupportedModelError",
    "POLICY_KINDS",
    "EvictionPolicy",
    "accumulate_scores",
    "evict",
    "BudgetPlan",
    "LayerGroups",
    "allocate_budgets",
    "cluster_layers",
    "KvCacheState",
    "LayerCache",
    "ModelShape",
    "SimConfig",
    "config_from_dict",
    "config_to_dict",
    "crossover_tokens",
    "kv_cache_bytes",
    "kv_cache_bytes_actual",
    "load_config",
    "per_token_bytes",
    "CompactTrace",
    "CosineProfile",
    "PrefillTrace",
    "cosine_similarity",
    "profile_layers",
    "SIM_MODES",
    "PrefillResult",
    "SimReport",
    "StepRecord",
    "ToyDecoder",
    "ToyModelSpec",
    "attention_mass_retained",
    "make_planted_trace",
    "random_prompt",
    "rms_norm",
    "simulate_decode",
    "toy_prefill",
    "load_trace",
    "save_trace",
    "__version__",
]
