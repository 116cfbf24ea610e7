"""Code-switching data augmentation.

Phrase-table entries are indexed against the training corpus (single entries
and co-occurring entry combinations), then matching sentences are sampled
with per-entry caps and their source phrases replaced in place by the target
translation, tagged as target-language tokens.

An occurrence is indexed only when the word alignment supports it: every
link leaving the matched source span must land inside the matched target
span, and at least one link must connect the two (mutual-translation
evidence).
"""

from __future__ import annotations

import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .aligner import AlignmentLinks
from .corpus import Lang, SentencePair, Token
from .phrases import Phrase, PhrasePair, PhraseTable

logger = logging.getLogger(__name__)

DEFAULT_K1 = 100
DEFAULT_K2 = 30

Span = tuple[int, int]  # inclusive token span
Replacement = tuple[Span, Phrase]  # original source span -> inserted target phrase


@dataclass(frozen=True)
class Occurrence:
    sent_id: int
    src_span: Span
    tgt_span: Span


@dataclass(frozen=True)
class DoubleOccurrence:
    sent_id: int
    first: tuple[Span, Span]   # (src span, tgt span) of the first entry of the key
    second: tuple[Span, Span]


@dataclass
class MatchIndex:
    corpus: Sequence[SentencePair]
    single: dict[PhrasePair, list[Occurrence]]
    double: dict[tuple[PhrasePair, PhrasePair], list[DoubleOccurrence]]


@dataclass(frozen=True)
class AugmentedPair:
    """A code-switched source with its unchanged target."""

    source: tuple[Token, ...]
    target: tuple[Token, ...]
    replacements: tuple[Replacement, ...]

    def __post_init__(self) -> None:
        if not self.replacements:
            raise ValueError("augmented pair must record at least one replacement")

    def to_sentence_pair(self) -> SentencePair:
        return SentencePair(self.source, self.target)

    def source_surfaces(self) -> list[str]:
        return [tok.surface for tok in self.source]

    def target_surfaces(self) -> list[str]:
        return [tok.surface for tok in self.target]


def _spans_overlap(a: Span, b: Span) -> bool:
    return not (a[1] < b[0] or b[1] < a[0])


def _find_occurrences(haystack: list[str], needle: Phrase) -> list[Span]:
    n = len(needle)
    return [
        (i, i + n - 1)
        for i in range(len(haystack) - n + 1)
        if tuple(haystack[i : i + n]) == needle
    ]


def _consistent(src_span: Span, tgt_span: Span, links: AlignmentLinks) -> bool:
    supported = False
    for i, j in links:
        if src_span[0] <= i <= src_span[1]:
            if not (tgt_span[0] <= j <= tgt_span[1]):
                return False
            supported = True
    return supported


def build_match_index(
    corpus: Sequence[SentencePair],
    table: PhraseTable,
    alignments: Sequence[AlignmentLinks],
) -> MatchIndex:
    """Index every alignment-consistent occurrence of table entries, then all
    non-overlapping co-occurrences of two distinct entries."""
    if len(corpus) != len(alignments):
        raise ValueError(f"corpus/alignment length mismatch {len(corpus)} vs {len(alignments)}")

    src_phrases = set(table.source_phrases())
    single: dict[PhrasePair, list[Occurrence]] = defaultdict(list)
    double: dict[tuple[PhrasePair, PhrasePair], list[DoubleOccurrence]] = defaultdict(list)

    for sent_id, (pair, links) in enumerate(zip(corpus, alignments)):
        src = pair.source_surfaces()
        tgt = pair.target_surfaces()
        matched: list[tuple[PhrasePair, Span, Span]] = []
        seen_src_phrases = set()
        for n in range(1, min(3, len(src)) + 1):
            for i in range(len(src) - n + 1):
                phrase = tuple(src[i : i + n])
                if phrase not in src_phrases or phrase in seen_src_phrases:
                    continue
                seen_src_phrases.add(phrase)
                src_occs = _find_occurrences(src, phrase)
                for entry in table.targets_of(phrase):
                    for tgt_span in _find_occurrences(tgt, entry.tgt):
                        for src_span in src_occs:
                            if _consistent(src_span, tgt_span, links):
                                single[entry].append(Occurrence(sent_id, src_span, tgt_span))
                                matched.append((entry, src_span, tgt_span))

        by_entry: dict[PhrasePair, list[tuple[Span, Span]]] = defaultdict(list)
        for entry, s, t in matched:
            by_entry[entry].append((s, t))
        entries = sorted(by_entry)
        for a in range(len(entries)):
            for b in range(a + 1, len(entries)):
                e1, e2 = entries[a], entries[b]
                for s1, t1 in by_entry[e1]:
                    for s2, t2 in by_entry[e2]:
                        if _spans_overlap(s1, s2) or _spans_overlap(t1, t2):
                            continue
                        double[(e1, e2)].append(DoubleOccurrence(sent_id, (s1, t1), (s2, t2)))

    return MatchIndex(corpus=corpus, single=dict(single), double=dict(double))


def apply_replacements(pair: SentencePair, spans: Sequence[Replacement]) -> AugmentedPair:
    """Replace each source span by its target phrase (tagged TGT), in place.

    Spans are in original-sentence coordinates, must lie in bounds and must
    not overlap. The target side is untouched.
    """
    ordered = sorted(spans, key=lambda r: r[0])
    for (lo, hi), phrase in ordered:
        if lo < 0 or hi >= len(pair.source) or lo > hi:
            raise ValueError(f"replacement span ({lo}, {hi}) out of bounds")
        if not phrase:
            raise ValueError("replacement phrase must be non-empty")
    for ((_, hi1), _), ((lo2, _), _) in zip(ordered, ordered[1:]):
        if lo2 <= hi1:
            raise ValueError("replacement spans overlap")

    source: list[Token] = []
    cursor = 0
    for (lo, hi), phrase in ordered:
        source.extend(pair.source[cursor:lo])
        source.extend(Token(surface, Lang.TGT) for surface in phrase)
        cursor = hi + 1
    source.extend(pair.source[cursor:])
    return AugmentedPair(tuple(source), pair.target, tuple(ordered))


def sample_augmented(
    index: MatchIndex,
    k1: int = DEFAULT_K1,
    k2: int = DEFAULT_K2,
    seed: int = 0,
) -> list[AugmentedPair]:
    """Sample single- and double-replacement code-switched pairs.

    Per phrase pair at most `k1` matching sentences, per pair combination at
    most `k2`, sampled without replacement. When a sentence matches an entry
    at several positions one occurrence is chosen uniformly. Entries are
    visited in sorted order so a fixed seed reproduces the sample exactly.
    """
    rng = random.Random(seed)
    out: list[AugmentedPair] = []

    for entry in sorted(index.single):
        by_sent: dict[int, list[Occurrence]] = defaultdict(list)
        for occ in index.single[entry]:
            by_sent[occ.sent_id].append(occ)
        sent_ids = list(by_sent)
        chosen = sent_ids if len(sent_ids) <= k1 else rng.sample(sent_ids, k1)
        for sent_id in chosen:
            occ = rng.choice(by_sent[sent_id])
            out.append(apply_replacements(index.corpus[sent_id], [(occ.src_span, entry.tgt)]))

    for combo in sorted(index.double):
        e1, e2 = combo
        by_sent2: dict[int, list[DoubleOccurrence]] = defaultdict(list)
        for docc in index.double[combo]:
            by_sent2[docc.sent_id].append(docc)
        sent_ids = list(by_sent2)
        chosen = sent_ids if len(sent_ids) <= k2 else rng.sample(sent_ids, k2)
        for sent_id in chosen:
            docc = rng.choice(by_sent2[sent_id])
            out.append(
                apply_replacements(
                    index.corpus[sent_id],
                    [(docc.first[0], e1.tgt), (docc.second[0], e2.tgt)],
                )
            )
    return out


def build_training_set(
    original: Sequence[SentencePair],
    augmented: Sequence[AugmentedPair],
) -> list[SentencePair]:
    """Original corpus followed by the augmented pairs, no deduplication."""
    return list(original) + [aug.to_sentence_pair() for aug in augmented]


def save_augmented(augmented: Sequence[AugmentedPair], path: str | Path) -> None:
    """JSON-lines: src surfaces, per-token language tags, target, replacements."""
    lines = []
    for aug in augmented:
        record = {
            "src": aug.source_surfaces(),
            "src_lang": [tok.lang.value for tok in aug.source],
            "tgt": aug.target_surfaces(),
            "repl": [[lo, hi, " ".join(phrase)] for (lo, hi), phrase in aug.replacements],
        }
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")


def load_augmented(path: str | Path) -> list[AugmentedPair]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        record = json.loads(line)
        source = tuple(
            Token(surface, Lang(lang)) for surface, lang in zip(record["src"], record["src_lang"])
        )
        target = tuple(Token(surface, Lang.TGT) for surface in record["tgt"])
        repl = tuple(((lo, hi), tuple(phrase.split())) for lo, hi, phrase in record["repl"])
        out.append(AugmentedPair(source, target, repl))
    return out
