"""Deterministic synthetic language pair for end-to-end runs.

Source symbols s_i map one-to-one onto target symbols t_i; the target side
additionally swaps each adjacent position pair (local reordering), so the
mapping stays learnable by a small model while being more than a copy. The
identity variant uses the same symbols on both sides with no reordering,
giving a pure copy task.
"""

from __future__ import annotations

import random

from .constraints import LexiconEntry
from .corpus import Lang, SentencePair, Token

DEFAULT_VOCAB_SIZE = 50
DEFAULT_MIN_LEN = 5
DEFAULT_MAX_LEN = 10


def _reorder(indices: list[int]) -> list[int]:
    out = list(indices)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def _make_pair(
    length: int,
    rng: random.Random,
    src_symbols: list[str],
    tgt_symbols: list[str],
    identity: bool,
) -> SentencePair:
    picks = [rng.randrange(len(src_symbols)) for _ in range(length)]
    source = tuple(Token(src_symbols[i], Lang.SRC) for i in picks)
    tgt_picks = picks if identity else _reorder(picks)
    target = tuple(Token(tgt_symbols[i], Lang.TGT) for i in tgt_picks)
    return SentencePair(source, target)


def make_synthetic_task(
    n_train: int,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    seed: int = 0,
    min_len: int = DEFAULT_MIN_LEN,
    max_len: int = DEFAULT_MAX_LEN,
    identity: bool = False,
) -> tuple[list[SentencePair], list[SentencePair], list[LexiconEntry]]:
    """Generate `n_train` training pairs, `n_train // 10` test pairs and the
    gold unigram lexicon. Fully determined by the seed."""
    if n_train < 10:
        raise ValueError("n_train must be at least 10")
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")

    if identity:
        src_symbols = [f"w{i}" for i in range(1, vocab_size + 1)]
        tgt_symbols = src_symbols
    else:
        src_symbols = [f"s{i}" for i in range(1, vocab_size + 1)]
        tgt_symbols = [f"t{i}" for i in range(1, vocab_size + 1)]

    rng = random.Random(seed)
    train = [
        _make_pair(rng.randint(min_len, max_len), rng, src_symbols, tgt_symbols, identity)
        for _ in range(n_train)
    ]
    test = [
        _make_pair(rng.randint(min_len, max_len), rng, src_symbols, tgt_symbols, identity)
        for _ in range(n_train // 10)
    ]
    lexicon = [
        LexiconEntry((src_symbols[i],), (tgt_symbols[i],)) for i in range(vocab_size)
    ]
    return train, test, lexicon
