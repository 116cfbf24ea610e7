"""Word alignment with IBM Model 1.

EM over surface co-occurrence, one lexical table per direction, Viterbi
(argmax) links symmetrized by intersection. The simplest Model 1 variant:
no NULL word, uniform alignment prior.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import SentencePair

logger = logging.getLogger(__name__)

DEFAULT_EM_ITERATIONS = 5


class TranslationTable:
    """Lexical table t(col | row): for every row surface, a distribution over column surfaces."""

    def __init__(self, table: dict[str, dict[str, float]], log_likelihoods: list[float] | None = None):
        self._table = table
        # corpus log-likelihood of the parameters entering each EM iteration
        self.log_likelihoods = log_likelihoods or []

    def prob(self, row: str, col: str) -> float:
        return self._table.get(row, {}).get(col, 0.0)

    def row(self, row: str) -> dict[str, float]:
        return self._table.get(row, {})

    def rows(self) -> list[str]:
        return list(self._table)

    def save(self, path: str | Path) -> None:
        lines = []
        for row in self._table:
            for col, p in self._table[row].items():
                lines.append(f"{row}\t{col}\t{p:.10g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TranslationTable":
        table: dict[str, dict[str, float]] = defaultdict(dict)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            row, col, p = line.split("\t")
            table[row][col] = float(p)
        return cls(dict(table))


@dataclass(frozen=True)
class AlignmentLinks:
    """Symmetrized links for one sentence pair, as (source index, target index)."""

    links: frozenset[tuple[int, int]]

    @classmethod
    def of(cls, links) -> "AlignmentLinks":
        return cls(frozenset(links))

    def __contains__(self, link: tuple[int, int]) -> bool:
        return link in self.links

    def __iter__(self):
        return iter(self.links)

    def __len__(self) -> int:
        return len(self.links)

    def to_pharaoh(self) -> str:
        return " ".join(f"{i}-{j}" for i, j in sorted(self.links))

    @classmethod
    def from_pharaoh(cls, line: str) -> "AlignmentLinks":
        links = set()
        for chunk in line.split():
            i, j = chunk.split("-")
            links.add((int(i), int(j)))
        return cls(frozenset(links))


def save_alignments(alignments: Sequence[AlignmentLinks], path: str | Path) -> None:
    Path(path).write_text("\n".join(a.to_pharaoh() for a in alignments) + "\n", encoding="utf-8")


def load_alignments(path: str | Path) -> list[AlignmentLinks]:
    return [
        AlignmentLinks.from_pharaoh(line)
        for line in Path(path).read_text(encoding="utf-8").split("\n")[:-1]
    ]


def train_ibm1(
    corpus: Sequence[SentencePair],
    iterations: int = DEFAULT_EM_ITERATIONS,
    reverse: bool = False,
) -> TranslationTable:
    """EM-train t(target surface | source surface); `reverse=True` swaps the roles.

    Initialization is uniform over co-occurring pairs. Everything iterates in
    corpus/insertion order, so the result is deterministic for a fixed corpus.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")

    sentences: list[tuple[list[str], list[str]]] = []
    for pair in corpus:
        rows, cols = pair.source_surfaces(), pair.target_surfaces()
        if reverse:
            rows, cols = cols, rows
        sentences.append((rows, cols))

    cooc: dict[str, dict[str, None]] = defaultdict(dict)  # value dict used as ordered set
    for rows, cols in sentences:
        for r in rows:
            for c in cols:
                cooc[r][c] = None
    t: dict[str, dict[str, float]] = {
        r: {c: 1.0 / len(cs) for c in cs} for r, cs in cooc.items()
    }

    log_likelihoods = []
    for _ in range(iterations):
        counts: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
        ll = 0.0
        for rows, cols in sentences:
            for c in cols:
                denom = sum(t[r][c] for r in rows)
                ll += math.log(denom) - math.log(len(rows))
                for r in rows:
                    counts[r][c] += t[r][c] / denom
        log_likelihoods.append(ll)
        for r, row_counts in counts.items():
            total = sum(row_counts.values())
            for c, n in row_counts.items():
                t[r][c] = n / total
    return TranslationTable(t, log_likelihoods)


def _viterbi(rows: list[str], cols: list[str], table: TranslationTable) -> list[int | None]:
    """For each column token, the argmax row index, or None if all probabilities are 0."""
    out: list[int | None] = []
    for c in cols:
        best, best_p = None, 0.0
        for i, r in enumerate(rows):
            p = table.prob(r, c)
            if p > best_p:
                best, best_p = i, p
        out.append(best)
    return out


def align_pair(
    pair: SentencePair,
    fwd: TranslationTable,
    rev: TranslationTable,
) -> AlignmentLinks:
    """Intersection of the two directional Viterbi alignments.

    `fwd` must be t(tgt|src), `rev` t(src|tgt). Ties in the argmax go to the
    lowest index; tokens with no positive-probability counterpart stay
    unaligned.
    """
    src, tgt = pair.source_surfaces(), pair.target_surfaces()
    tgt_to_src = _viterbi(src, tgt, fwd)   # a[j] = best source index for target j
    src_to_tgt = _viterbi(tgt, src, rev)   # b[i] = best target index for source i
    links = set()
    for j, i in enumerate(tgt_to_src):
        if i is not None and src_to_tgt[i] == j:
            links.add((i, j))
    return AlignmentLinks.of(links)


def align_corpus(
    corpus: Sequence[SentencePair],
    fwd: TranslationTable,
    rev: TranslationTable,
) -> list[AlignmentLinks]:
    return [align_pair(pair, fwd, rev) for pair in corpus]
