"""Parallel corpus I/O: tokenization, vocabularies, numericalization.

Sentences are sequences of `Token`s; every token carries a language tag so
that code-switched sources (target-language tokens embedded in a source
sentence) stay distinguishable all the way into the model.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

DEFAULT_MAX_LEN = 128


class Lang(Enum):
    """Language tag of a token inside a possibly code-switched sentence."""

    SRC = "SRC"
    TGT = "TGT"


@dataclass(frozen=True, slots=True)
class Token:
    surface: str
    lang: Lang = Lang.SRC

    def __post_init__(self) -> None:
        if not self.surface or any(ch.isspace() for ch in self.surface):
            raise ValueError(f"token surface must be non-empty, whitespace-free: {self.surface!r}")


@dataclass(frozen=True)
class SentencePair:
    """One parallel sentence. The source may mix SRC and TGT tokens; the target never does."""

    source: tuple[Token, ...]
    target: tuple[Token, ...]

    def __post_init__(self) -> None:
        if not self.source or not self.target:
            raise ValueError("sentence pair sides must be non-empty")
        if any(tok.lang is not Lang.TGT for tok in self.target):
            raise ValueError("target side must be all target-language tokens")

    def source_surfaces(self) -> list[str]:
        return [tok.surface for tok in self.source]

    def target_surfaces(self) -> list[str]:
        return [tok.surface for tok in self.target]


def tokenize(line: str, lang: Lang = Lang.SRC) -> list[Token]:
    """Whitespace-split `line` into tokens tagged with `lang`. Empty line -> []."""
    return [Token(surface, lang) for surface in line.split()]


class Vocabulary:
    """Surface <-> id bijection with fixed specials at ids 0-3.

    Non-special ids are assigned by descending corpus frequency, ties broken
    lexicographically, so the same corpus always yields the same table.
    """

    def __init__(self, surfaces: Sequence[str]):
        for special in SPECIALS:
            if special in surfaces:
                raise ValueError(f"special {special} cannot be a corpus surface")
        self._id_of: dict[str, int] = {s: i for i, s in enumerate(SPECIALS)}
        for surface in surfaces:
            if surface in self._id_of:
                raise ValueError(f"duplicate surface {surface!r}")
            self._id_of[surface] = len(self._id_of)
        self._surface_of = {i: s for s, i in self._id_of.items()}

    @property
    def size(self) -> int:
        return len(self._id_of)

    def __len__(self) -> int:
        return len(self._id_of)

    def __contains__(self, surface: str) -> bool:
        return surface in self._id_of

    def id_of(self, surface: str) -> int:
        return self._id_of.get(surface, UNK_ID)

    def surface_of(self, idx: int) -> str:
        return self._surface_of[idx]

    def non_special_surfaces(self) -> list[str]:
        return [self._surface_of[i] for i in range(len(SPECIALS), self.size)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    def to_tsv(self) -> str:
        lines = [f"{self._surface_of[i]}\t{i}" for i in range(self.size)]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        surfaces = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            surface, idx = line.split("\t")
            if int(idx) < len(SPECIALS):
                if surface != SPECIALS[int(idx)]:
                    raise ValueError(f"corrupt vocabulary file: special row {line!r}")
                continue
            surfaces.append(surface)
        return cls(surfaces)


def build_vocab(corpus: Iterable[Sequence[Token]], max_size: int) -> Vocabulary:
    """Keep the `max_size - 4` most frequent surfaces plus the specials.

    Surfaces colliding with special symbols are ignored rather than counted.
    """
    if max_size < len(SPECIALS):
        raise ValueError(f"max_size must be >= {len(SPECIALS)}, got {max_size}")
    counts: Counter[str] = Counter()
    for sentence in corpus:
        counts.update(tok.surface for tok in sentence if tok.surface not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [surface for surface, _ in ranked[: max_size - len(SPECIALS)]]
    return Vocabulary(kept)


def merge_vocabularies(vocab_src: Vocabulary, vocab_tgt: Vocabulary) -> Vocabulary:
    """Enlarged source vocabulary covering target surfaces as well.

    Source surfaces keep their relative order; target surfaces not already
    present are appended in target-id order.
    """
    surfaces = vocab_src.non_special_surfaces()
    seen = set(surfaces)
    for surface in vocab_tgt.non_special_surfaces():
        if surface not in seen:
            surfaces.append(surface)
            seen.add(surface)
    return Vocabulary(surfaces)


def read_parallel(
    src_path: str | Path,
    tgt_path: str | Path,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[list[SentencePair], int]:
    """Read line-parallel files into sentence pairs, in file order.

    Pairs with an empty side or a side longer than `max_len` are dropped;
    the second return value is the number of dropped pairs.
    """
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"line count mismatch {len(src_lines)} vs {len(tgt_lines)}")
    pairs = []
    dropped = 0
    for src_line, tgt_line in zip(src_lines, tgt_lines):
        source = tuple(tokenize(src_line, Lang.SRC))
        target = tuple(tokenize(tgt_line, Lang.TGT))
        if not source or not target or len(source) > max_len or len(target) > max_len:
            dropped += 1
            continue
        pairs.append(SentencePair(source, target))
    if dropped:
        logger.info("read_parallel: dropped %d of %d pairs", dropped, len(src_lines))
    return pairs, dropped


def write_parallel(pairs: Sequence[SentencePair], src_path: str | Path, tgt_path: str | Path) -> None:
    src_text = "\n".join(" ".join(p.source_surfaces()) for p in pairs)
    tgt_text = "\n".join(" ".join(p.target_surfaces()) for p in pairs)
    Path(src_path).write_text(src_text + "\n" if src_text else "", encoding="utf-8")
    Path(tgt_path).write_text(tgt_text + "\n" if tgt_text else "", encoding="utf-8")


def encode(
    tokens: Sequence[Token],
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
) -> list[tuple[int, Lang]]:
    """Numericalize tokens: SRC surfaces via `vocab_src`, TGT surfaces via `vocab_tgt`.

    Callers select the lookup scheme by what they pass: the shared-embedding
    configurations pass the true source and target vocabularies, while the
    merged configuration passes the merged vocabulary for both slots.
    """
    out = []
    for tok in tokens:
        vocab = vocab_src if tok.lang is Lang.SRC else vocab_tgt
        out.append((vocab.id_of(tok.surface), tok.lang))
    return out


def decode(
    encoded: Sequence[tuple[int, Lang]],
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
) -> list[Token]:
    """Inverse of :func:`encode` for in-vocabulary ids."""
    out = []
    for idx, lang in encoded:
        vocab = vocab_src if lang is Lang.SRC else vocab_tgt
        out.append(Token(vocab.surface_of(idx), lang))
    return out
