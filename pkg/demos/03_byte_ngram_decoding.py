"""Decoding text with fused byte-level n-gram models.

Trains three tiny n-gram models (a "large" generalist, a fine-tuned
specialist, and the specialist's base), then decodes the same prompt
under several fusion modes and prints what each produces along with its
per-step weight trajectory.

Run:  python3 demos/03_byte_ngram_decoding.py
"""

import numpy as np

from logitfuse import (
    DecodeConfig,
    ExpertProviders,
    NGramProvider,
    ProviderSet,
    SamplingConfig,
    decode,
    train_ngram,
)

rng = np.random.default_rng(42)

# Corpora: the generalist sees mostly prose, the specialist sees
# shouty uppercase. Byte-level models need no tokenizer.
prose = (b"the quick brown fox jumps over the lazy dog. "
         b"a day in the life of the world. " * 120)
shouty = (b"THE QUICK BROWN FOX JUMPS OVER THE LAZY DOG. "
          b"A DAY IN THE LIFE OF THE WORLD. " * 120)

large = NGramProvider(train_ngram(prose + shouty[: len(shouty) // 4], order=3))
fine_tuned = NGramProvider(train_ngram(shouty, order=3))
base = NGramProvider(train_ngram(prose, order=3))

providers = ProviderSet(
    large=large,
    experts=[ExpertProviders("shout", fine_tuned, base)],
)

prompt = b"THE QUICK "


def run(mode, **kwargs):
    config = DecodeConfig(
        max_new_tokens=40,
        mode=mode,
        sampling=SamplingConfig(strategy="greedy"),
        **kwargs,
    )
    return decode(list(prompt), providers, config)


for label, result in [
    ("alpha=0 (large only)", run("fixed", fixed_alphas=[0.0])),
    ("proxy (alpha=1)     ", run("proxy")),
    ("fixed alpha=1.5     ", run("fixed", fixed_alphas=[1.5])),
    ("adaptive            ", run("adaptive_single")),
]:
    text = bytes(result.tokens[len(prompt):]).decode("latin-1")
    print(f"{label} -> {text!r}")

# The adaptive run also records why it chose each weight.
result = run("adaptive_single")
print("\nadaptive weight trajectory (first 10 steps):")
for trace in result.traces[:10]:
    print(f"  step {trace.step_index:2d} byte={bytes([trace.token_id])!r} "
          f"alpha={trace.alphas[0]:3.1f} objective={trace.objective_value:8.5f}")

mean_alpha = float(np.mean([t.alphas[0] for t in result.traces]))
print(f"mean chosen alpha: {mean_alpha:.2f}")
