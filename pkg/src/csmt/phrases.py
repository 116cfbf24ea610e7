"""Phrase-pair extraction and the pruned phrase table.

Extraction uses the standard consistency criterion: a source/target span box
is kept when it contains at least one alignment link and no link crosses its
boundary. Source phrases are capped at trigrams; the target cap guards
against degenerate whole-sentence phrases. No unaligned-word extension of
boxes is performed (strict consistency only).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .aligner import AlignmentLinks
from .corpus import SentencePair

logger = logging.getLogger(__name__)

MAX_SRC_PHRASE_LEN = 3
DEFAULT_MAX_TGT_PHRASE_LEN = 5
DEFAULT_PRUNE_THRESHOLD = 10

Phrase = tuple[str, ...]


@dataclass(frozen=True, order=True)
class PhrasePair:
    src: Phrase
    tgt: Phrase

    def __post_init__(self) -> None:
        if not self.src or not self.tgt:
            raise ValueError("phrase pair sides must be non-empty")
        if len(self.src) > MAX_SRC_PHRASE_LEN:
            raise ValueError(f"source phrase longer than {MAX_SRC_PHRASE_LEN}: {self.src}")


class PhraseTable:
    """PhrasePair -> (count, p(tgt|src)), with per-source-phrase lookup."""

    def __init__(self, counts: dict[PhrasePair, int]):
        self._counts = dict(counts)
        self._by_src: dict[Phrase, list[PhrasePair]] = defaultdict(list)
        for pair in self._counts:
            self._by_src[pair.src].append(pair)
        src_totals = {
            src: sum(self._counts[p] for p in pairs) for src, pairs in self._by_src.items()
        }
        self._probs = {
            pair: self._counts[pair] / src_totals[pair.src] for pair in self._counts
        }

    def __len__(self) -> int:
        return len(self._counts)

    def __contains__(self, pair: PhrasePair) -> bool:
        return pair in self._counts

    def __iter__(self):
        return iter(self._counts)

    def count(self, pair: PhrasePair) -> int:
        return self._counts[pair]

    def prob(self, pair: PhrasePair) -> float:
        return self._probs[pair]

    def entries(self) -> list[PhrasePair]:
        return sorted(self._counts)

    def source_phrases(self) -> list[Phrase]:
        return sorted(self._by_src)

    def targets_of(self, src: Phrase) -> list[PhrasePair]:
        return sorted(self._by_src.get(src, []))

    def save(self, path: str | Path) -> None:
        lines = []
        for pair in self.entries():
            src, tgt = " ".join(pair.src), " ".join(pair.tgt)
            lines.append(f"{src} ||| {tgt} ||| {self._counts[pair]} ||| {self._probs[pair]:.10g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PhraseTable":
        counts = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            src, tgt, count, _prob = (chunk.strip() for chunk in line.split("|||"))
            counts[PhrasePair(tuple(src.split()), tuple(tgt.split()))] = int(count)
        return cls(counts)


def extract_consistent_spans(
    pair: SentencePair,
    links: AlignmentLinks,
    max_src: int = MAX_SRC_PHRASE_LEN,
    max_tgt: int = DEFAULT_MAX_TGT_PHRASE_LEN,
) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """All consistent (source span, target span) boxes, spans inclusive.

    A box is consistent when at least one link lies inside it and no link has
    exactly one endpoint inside it.
    """
    m, n = len(pair.source), len(pair.target)
    link_list = sorted(links)
    boxes = []
    for i1 in range(m):
        for i2 in range(i1, min(i1 + max_src, m)):
            for j1 in range(n):
                for j2 in range(j1, min(j1 + max_tgt, n)):
                    inside = False
                    consistent = True
                    for (i, j) in link_list:
                        src_in = i1 <= i <= i2
                        tgt_in = j1 <= j <= j2
                        if src_in and tgt_in:
                            inside = True
                        elif src_in or tgt_in:
                            consistent = False
                            break
                    if inside and consistent:
                        boxes.append(((i1, i2), (j1, j2)))
    return boxes


def extract_consistent_phrases(
    pair: SentencePair,
    links: AlignmentLinks,
    max_src: int = MAX_SRC_PHRASE_LEN,
    max_tgt: int = DEFAULT_MAX_TGT_PHRASE_LEN,
) -> set[PhrasePair]:
    """Surface phrase pairs of all consistent boxes of one sentence pair."""
    src, tgt = pair.source_surfaces(), pair.target_surfaces()
    out = set()
    for (i1, i2), (j1, j2) in extract_consistent_spans(pair, links, max_src, max_tgt):
        out.add(PhrasePair(tuple(src[i1 : i2 + 1]), tuple(tgt[j1 : j2 + 1])))
    return out


def build_phrase_table(
    corpus: Sequence[SentencePair],
    alignments: Sequence[AlignmentLinks],
    max_src: int = MAX_SRC_PHRASE_LEN,
    max_tgt: int = DEFAULT_MAX_TGT_PHRASE_LEN,
) -> PhraseTable:
    """Accumulate box-occurrence counts over the corpus; p(tgt|src) by count ratio."""
    if len(corpus) != len(alignments):
        raise ValueError(f"corpus/alignment length mismatch {len(corpus)} vs {len(alignments)}")
    counts: dict[PhrasePair, int] = defaultdict(int)
    for pair, links in zip(corpus, alignments):
        src, tgt = pair.source_surfaces(), pair.target_surfaces()
        for (i1, i2), (j1, j2) in extract_consistent_spans(pair, links, max_src, max_tgt):
            counts[PhrasePair(tuple(src[i1 : i2 + 1]), tuple(tgt[j1 : j2 + 1]))] += 1
    return PhraseTable(counts)


def prune_table(table: PhraseTable, threshold: int = DEFAULT_PRUNE_THRESHOLD) -> PhraseTable:
    """Drop entries with joint count below `threshold`; probabilities renormalize."""
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    kept = {pair: table.count(pair) for pair in table if table.count(pair) >= threshold}
    return PhraseTable(kept)
