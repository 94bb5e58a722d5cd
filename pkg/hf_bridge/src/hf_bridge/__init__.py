"""Logit wire-protocol server over Hugging Face transformer checkpoints."""

from .bridge import (
    MASK_SENTINEL,
    MAX_VOCAB_SIZE,
    BridgeConfig,
    CheckpointModel,
    encode_logits,
    ensure_vocab_within_limit,
    make_bridge_server,
    serve_in_thread,
    tokenizer_fingerprint,
)

__version__ = "0.1.0"

__all__ = [
    "MASK_SENTINEL",
    "MAX_VOCAB_SIZE",
    "BridgeConfig",
    "CheckpointModel",
    "encode_logits",
    "ensure_vocab_within_limit",
    "make_bridge_server",
    "serve_in_thread",
    "tokenizer_fingerprint",
    "__version__",
]
