"""Fixtures: tiny locally built causal LM checkpoints sharing one tokenizer.

The public model hub is unreachable in the test environment, so the
"small public checkpoint" stand-in is a seeded randomly initialized
GPT-2-style model saved to disk. Everything the bridge exercises
(tokenizer identity, forward pass, serialization) is the same code path
a downloaded checkpoint would take.
"""

import pytest

torch = pytest.importorskip("torch")
pytest.importorskip("transformers")


def _build_tokenizer(directory):
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
    from transformers import PreTrainedTokenizerFast

    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=320,
        special_tokens=["<|endoftext|>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    corpus = [
        "the quick brown fox jumps over the lazy dog",
        "a day in the life of the world",
        "time and time again the people spoke",
    ] * 20
    tok.train_from_iterator(corpus, trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, eos_token="<|endoftext|>")
    fast.save_pretrained(str(directory))
    return fast


def _build_model(directory, tokenizer, seed):
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(seed)
    eos = tokenizer.eos_token_id
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_embd=32,
        n_layer=2,
        n_head=2,
        n_positions=64,
        bos_token_id=eos,
        eos_token_id=eos,
    )
    model = GPT2LMHeadModel(config)
    model.save_pretrained(str(directory))


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    """Three checkpoint directories (large, ft, base) with a shared tokenizer."""
    root = tmp_path_factory.mktemp("checkpoints")
    paths = {}
    tokenizer = None
    for name, seed in (("large", 10), ("ft", 11), ("base", 12)):
        directory = root / name
        directory.mkdir()
        if tokenizer is None:
            tokenizer = _build_tokenizer(directory)
        else:
            tokenizer.save_pretrained(str(directory))
        _build_model(directory, tokenizer, seed)
        paths[name] = str(directory)
    return paths
