"""Decode-time lexicon constraints.

A constraint lexicon maps source phrases to required target phrases. At
inference the source sentence is rewritten before decoding: either the
matched span is replaced by the target phrase itself (code-switching) or by
an indexed placeholder tag that a post-processing step expands again.
Matching is leftmost-longest, non-overlapping, case-sensitive on surface
forms, and never re-matches tokens already tagged as target language.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .aligner import AlignmentLinks
from .augment import build_match_index
from .corpus import Lang, SentencePair, Token
from .phrases import Phrase, PhraseTable

logger = logging.getLogger(__name__)

DEFAULT_PLACEHOLDER_RATIO = 0.05

TAG_PATTERN = re.compile(r"^<tag_(\d+)>$")


def tag_surface(index: int) -> str:
    return f"<tag_{index}>"


@dataclass(frozen=True, order=True)
class LexiconEntry:
    src: Phrase
    tgt: Phrase

    def __post_init__(self) -> None:
        if not self.src or not self.tgt:
            raise ValueError("lexicon entry sides must be non-empty")


@dataclass(frozen=True)
class ConstraintSet:
    """Lexicon entries for one sentence; source phrases must be distinct."""

    entries: tuple[LexiconEntry, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        srcs = [entry.src for entry in self.entries]
        if len(set(srcs)) != len(srcs):
            raise ValueError("constraint source phrases must be pairwise distinct")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


TagMap = dict[int, Phrase]


def _match_spans(
    src: Sequence[Token], cs: ConstraintSet
) -> list[tuple[int, int, LexiconEntry]]:
    """Leftmost-longest non-overlapping entry matches over SRC-tagged tokens."""
    by_len = sorted(cs.entries, key=lambda e: len(e.src), reverse=True)
    spans = []
    i = 0
    while i < len(src):
        if src[i].lang is Lang.TGT:
            i += 1
            continue
        hit = None
        for entry in by_len:
            n = len(entry.src)
            if i + n > len(src):
                continue
            window = src[i : i + n]
            if all(tok.lang is Lang.SRC for tok in window) and tuple(
                tok.surface for tok in window
            ) == entry.src:
                hit = entry
                break
        if hit is None:
            i += 1
        else:
            spans.append((i, i + len(hit.src) - 1, hit))
            i += len(hit.src)
    return spans


def apply_constraints(
    src: Sequence[Token], cs: ConstraintSet
) -> tuple[list[Token], list[LexiconEntry]]:
    """Rewrite the source by splicing in the required target phrases.

    Returns the code-switched source and the entries that matched at least
    once, in first-match order. No match leaves the source unchanged.
    """
    spans = _match_spans(src, cs)
    out: list[Token] = []
    applied: list[LexiconEntry] = []
    cursor = 0
    for lo, hi, entry in spans:
        out.extend(src[cursor:lo])
        out.extend(Token(surface, Lang.TGT) for surface in entry.tgt)
        cursor = hi + 1
        if entry not in applied:
            applied.append(entry)
    out.extend(src[cursor:])
    return out, applied


def tag_source(
    src: Sequence[Token], cs: ConstraintSet
) -> tuple[list[Token], TagMap]:
    """Replace matched spans by `<tag_1>`, `<tag_2>`, ... left to right."""
    spans = _match_spans(src, cs)
    out: list[Token] = []
    tag_map: TagMap = {}
    cursor = 0
    for index, (lo, hi, entry) in enumerate(spans, start=1):
        out.extend(src[cursor:lo])
        out.append(Token(tag_surface(index), Lang.SRC))
        tag_map[index] = entry.tgt
        cursor = hi + 1
    out.extend(src[cursor:])
    return out, tag_map


def untag_output(hyp: Sequence[str], tag_map: TagMap) -> tuple[list[str], int]:
    """Expand placeholder tags back into their target phrases.

    Returns the post-processed surfaces and the number of map entries whose
    tag never appeared in the hypothesis (copy failures). An unknown tag id
    in the hypothesis is an error.
    """
    out: list[str] = []
    seen: set[int] = set()
    for surface in hyp:
        m = TAG_PATTERN.match(surface)
        if m is None:
            out.append(surface)
            continue
        index = int(m.group(1))
        if index not in tag_map:
            raise ValueError(f"hypothesis contains unknown tag id {index}")
        out.extend(tag_map[index])
        seen.add(index)
    failures = len(set(tag_map) - seen)
    return out, failures


def sample_constraints_from_reference(
    pair: SentencePair,
    table: PhraseTable,
    n: int,
    seed: int = 0,
) -> ConstraintSet:
    """Sample up to `n` table entries usable as constraints for `pair`.

    An entry is eligible when its source phrase occurs contiguously in the
    source and its target phrase occurs contiguously in the reference.
    Entries are drawn uniformly, skipping any whose source phrase cannot be
    placed without overlapping an already chosen source span.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    src = [tok.surface for tok in pair.source]
    tgt = [tok.surface for tok in pair.target]

    eligible = []
    for pp in table.entries():
        if _occurrences(src, pp.src) and _occurrences(tgt, pp.tgt):
            eligible.append(LexiconEntry(pp.src, pp.tgt))
    eligible = sorted(set(eligible))

    rng = random.Random(seed)
    order = rng.sample(eligible, len(eligible))
    chosen: list[LexiconEntry] = []
    claimed: list[tuple[int, int]] = []
    used_srcs: set[Phrase] = set()
    for entry in order:
        if len(chosen) == n:
            break
        if entry.src in used_srcs:
            continue
        span = _first_free_occurrence(src, entry.src, claimed)
        if span is None:
            continue
        chosen.append(entry)
        claimed.append(span)
        used_srcs.add(entry.src)
    return ConstraintSet(tuple(chosen))


def _occurrences(haystack: list[str], needle: Phrase) -> list[tuple[int, int]]:
    n = len(needle)
    return [
        (i, i + n - 1)
        for i in range(len(haystack) - n + 1)
        if tuple(haystack[i : i + n]) == needle
    ]


def _first_free_occurrence(
    haystack: list[str], needle: Phrase, claimed: list[tuple[int, int]]
) -> tuple[int, int] | None:
    for lo, hi in _occurrences(haystack, needle):
        if all(hi < c_lo or c_hi < lo for c_lo, c_hi in claimed):
            return (lo, hi)
    return None


def make_placeholder_training_corpus(
    corpus: Sequence[SentencePair],
    table: PhraseTable,
    alignments: Sequence[AlignmentLinks],
    ratio: float = DEFAULT_PLACEHOLDER_RATIO,
    seed: int = 0,
    max_tags: int = 2,
) -> list[SentencePair]:
    """Tag a `ratio` fraction of sentences with aligned placeholders.

    A tagged sentence has one or two alignment-consistent phrase matches
    replaced by `<tag_i>` on BOTH sides, the same index on each side. The
    remaining sentences pass through unchanged.
    """
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must lie in [0, 1]")
    index = build_match_index(corpus, table, alignments)

    occ_by_sent: dict[int, list] = {}
    for entry in sorted(index.single):
        for occ in index.single[entry]:
            occ_by_sent.setdefault(occ.sent_id, []).append(occ)

    want = round(ratio * len(corpus))
    eligible = sorted(occ_by_sent)
    if want > len(eligible):
        logger.warning(
            "requested %d placeholder sentences but only %d have matches", want, len(eligible)
        )
    rng = random.Random(seed)
    chosen = set(rng.sample(eligible, min(want, len(eligible))))

    out: list[SentencePair] = []
    for sent_id, pair in enumerate(corpus):
        if sent_id not in chosen:
            out.append(pair)
            continue
        picks = []
        for occ in sorted(occ_by_sent[sent_id], key=lambda o: (o.src_span, o.tgt_span)):
            if len(picks) == max_tags:
                break
            if any(
                _spans_clash(occ.src_span, p.src_span) or _spans_clash(occ.tgt_span, p.tgt_span)
                for p in picks
            ):
                continue
            picks.append(occ)
        out.append(_tag_both_sides(pair, picks))
    return out


def _spans_clash(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return not (a[1] < b[0] or b[1] < a[0])


def _tag_both_sides(pair: SentencePair, picks: list) -> SentencePair:
    ordered = sorted(picks, key=lambda o: o.src_span)
    source: list[Token] = []
    cursor = 0
    for index, occ in enumerate(ordered, start=1):
        lo, hi = occ.src_span
        source.extend(pair.source[cursor:lo])
        source.append(Token(tag_surface(index), Lang.SRC))
        cursor = hi + 1
    source.extend(pair.source[cursor:])

    by_tgt = sorted(enumerate(ordered, start=1), key=lambda item: item[1].tgt_span)
    target: list[Token] = []
    cursor = 0
    for index, occ in by_tgt:
        lo, hi = occ.tgt_span
        target.extend(pair.target[cursor:lo])
        target.append(Token(tag_surface(index), Lang.TGT))
        cursor = hi + 1
    target.extend(pair.target[cursor:])
    return SentencePair(tuple(source), tuple(target))


def load_lexicon(path: str | Path) -> list[LexiconEntry]:
    """TSV lexicon: `src phrase \\t tgt phrase` per line."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated fields")
        entries.append(LexiconEntry(tuple(parts[0].split()), tuple(parts[1].split())))
    return entries


def save_lexicon(entries: Sequence[LexiconEntry], path: str | Path) -> None:
    lines = [f"{' '.join(e.src)}\t{' '.join(e.tgt)}" for e in entries]
    Path(path).write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")
