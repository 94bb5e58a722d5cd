"""Decoding-time fusion of small expert models into a large model.

At every generation step, the logit-space shift between a fine-tuned
small model and its pretrained base is scaled and added to a large
model's logits. The scale is chosen per step by matching the fused
distribution's KL shift against the experts' behavioral shift over a
grid of candidates.
"""

from .core import (
    AlphaAssignment,
    AlphaGrid,
    ExpertLogits,
    KlPair,
    LogitVector,
    ProbabilityDistribution,
    StepLogits,
    VocabSpec,
    behavioral_kls,
    fuse_logits,
    kl_divergence,
    multi_objective,
    search_alpha,
    single_objective,
    softmax,
    total_variation,
)
from .decoder import (
    DecodeConfig,
    DecodeResult,
    ExpertProviders,
    ProviderSet,
    SamplingConfig,
    StepTrace,
    decode,
    decode_step,
    sample_token,
    write_traces,
)
from .errors import LogitFuseError
from .harness import (
    ExperimentSpec,
    FusionScorer,
    ModeSpec,
    PromptCase,
    ProviderScorer,
    exact_match,
    perplexity,
    run_experiment,
    write_report,
)
from .providers import (
    HttpProvider,
    Provider,
    NGramModel,
    NGramProvider,
    ScriptedProvider,
    load_ngram,
    provider_from_spec,
    save_ngram,
    serve_in_thread,
    train_ngram,
)

__version__ = "0.1.0"
