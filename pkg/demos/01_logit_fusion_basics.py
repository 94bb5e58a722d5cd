"""Fusing expert logits into a large model, one step at a time.

Walks the core arithmetic on a toy 6-token vocabulary: build a step's
worth of logits, fuse with a few weights, and watch the fused
distribution move between the large model and the expert's shifted
behavior.

Run:  python3 demos/01_logit_fusion_basics.py
"""

import numpy as np

from logitfuse import (
    ExpertLogits,
    LogitVector,
    StepLogits,
    fuse_logits,
    kl_divergence,
    softmax,
    total_variation,
)

rng = np.random.default_rng(0)

# A large model that likes token 2, and a small expert pair whose
# fine-tuned half shifted probability mass toward token 4.
large = LogitVector([0.2, 0.1, 2.0, 0.0, 0.3, -0.5])
base = LogitVector([0.0, 0.0, 0.5, 0.0, 0.2, 0.0])
fine_tuned = LogitVector([0.0, 0.0, 0.5, 0.0, 2.2, 0.0])

step = StepLogits(
    large=large,
    experts=[ExpertLogits("demo", fine_tuned=fine_tuned, base=base)],
)

print("large model distribution: ", np.round(softmax(large).probs, 3))
print("expert behavioral delta:  ",
      np.round(fine_tuned.values - base.values, 3))
print()

# The fused logits are large + alpha * (fine_tuned - base). At alpha=0
# nothing happens; as alpha grows, the expert's shift takes over.
for alpha in (0.0, 0.5, 1.0, 2.0):
    fused = softmax(fuse_logits(step, [alpha]))
    tv = total_variation(fused, softmax(large))
    print(f"alpha={alpha:3.1f}  fused={np.round(fused.probs, 3)}  "
          f"TV from large={tv:.3f}  argmax={int(np.argmax(fused.probs))}")

print()

# The same fusion seen probabilistically: fused is proportional to
# P * (Q_ft / Q)^alpha, a product-of-experts ensemble.
alpha = 1.0
p = softmax(large).probs
q_ft = softmax(fine_tuned).probs
q = softmax(base).probs
product = p * (q_ft / q) ** alpha
product /= product.sum()
fused = softmax(fuse_logits(step, [alpha])).probs
print("product-of-experts view matches logit arithmetic:",
      np.allclose(product, fused, atol=1e-12))

# Behavioral KLs quantify how far the expert moved from its base; these
# are what the adaptive search tries to mirror in the fused output.
kl_forward = kl_divergence(softmax(fine_tuned), softmax(base))
kl_reverse = kl_divergence(softmax(base), softmax(fine_tuned))
print(f"expert behavioral KLs: forward={kl_forward:.4f} reverse={kl_reverse:.4f}")
