"""A desk-scale experiment: does adaptive fusion pick the right expert?

Builds a generalist "large" model plus two expert pairs, one trained on
domain A text and one on domain B text, then scores held-out domain A
text. Adaptive fusion should beat the no-fusion baseline, track the best
fixed weight, and put most of its weight on the matching expert.

Takes about half a minute. Run:  python3 demos/04_two_domain_experiment.py
"""

import random

import numpy as np

from logitfuse import (
    DecodeConfig,
    ExpertProviders,
    FusionScorer,
    NGramProvider,
    ProviderSet,
    perplexity,
    train_ngram,
)

# --- synthetic corpora -------------------------------------------------
# Domain words use disjoint character sets so their byte trigrams never
# collide: domain A is built from "jqvxz", domain B from digits.
GENERAL = ("the a of to and in is was for on with as it at by from this "
           "that time year people day way thing world life hand part").split()


def make_words(alphabet, count, seed):
    rnd = random.Random(seed)
    words = set()
    while len(words) < count:
        words.add("".join(rnd.choice(alphabet) for _ in range(rnd.randint(4, 8))))
    return sorted(words)


DOMAIN_A = make_words("jqvxz", 40, seed=101)
DOMAIN_B = make_words("0123456789", 40, seed=202)


def text(seed, size, pools_weights):
    rnd = random.Random(seed)
    pools, weights = zip(*pools_weights)
    out, total = [], 0
    while total < size:
        word = rnd.choice(rnd.choices(pools, weights=weights)[0])
        out.append(word)
        total += len(word) + 1
    return " ".join(out).encode()[:size]


large_corpus = text(1, 100_000, [(GENERAL, 0.9), (DOMAIN_A, 0.05), (DOMAIN_B, 0.05)])
a_corpus = text(2, 40_000, [(DOMAIN_A, 0.9), (GENERAL, 0.1)])
b_corpus = text(3, 40_000, [(DOMAIN_B, 0.9), (GENERAL, 0.1)])
general_corpus = text(4, 40_000, [(GENERAL, 1.0)])

large = NGramProvider(train_ngram(large_corpus, order=3))
ft_a = NGramProvider(train_ngram(a_corpus, order=3))
ft_b = NGramProvider(train_ngram(b_corpus, order=3))
base = NGramProvider(train_ngram(general_corpus, order=3))

held_out = text(99, 2048, [(DOMAIN_A, 0.9), (GENERAL, 0.1)])
prompt, eval_text = held_out[:16], held_out[16:784]

# --- fixed sweep vs adaptive, matching expert only ---------------------
matching = ProviderSet(large=large, experts=[ExpertProviders("a", ft_a, base)])

print("held-out domain A perplexity (lower is better):")
results = {}
for alpha in (0.0, 0.5, 1.0, 1.5):
    scorer = FusionScorer(matching, DecodeConfig(mode="fixed", fixed_alphas=[alpha]))
    results[alpha] = perplexity(scorer, eval_text, prompt=prompt)
    print(f"  fixed alpha={alpha:3.1f}  ppl={results[alpha]:7.3f}")

adaptive = FusionScorer(matching, DecodeConfig(mode="adaptive_single"))
ppl_adaptive = perplexity(adaptive, eval_text, prompt=prompt)
print(f"  adaptive        ppl={ppl_adaptive:7.3f}")

best_fixed = min(results[a] for a in (0.5, 1.0, 1.5))
print(f"\nadaptive vs no-fusion baseline: {ppl_adaptive:.3f} < {results[0.0]:.3f}")
print(f"adaptive vs best fixed:         {ppl_adaptive / best_fixed:.4f}x")

# --- which expert gets the weight? -------------------------------------
both = ProviderSet(
    large=large,
    experts=[ExpertProviders("a", ft_a, base), ExpertProviders("b", ft_b, base)],
)
scorer = FusionScorer(both, DecodeConfig(mode="adaptive_multi"))
perplexity(scorer, eval_text[:400], prompt=prompt)
history = np.stack(scorer.alpha_history)
print(f"\nmean weight on matching expert A:   {history[:, 0].mean():.3f}")
print(f"mean weight on mismatched expert B: {history[:, 1].mean():.3f}")
