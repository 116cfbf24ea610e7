"""Corpus-level evaluation: BLEU-4, copy success rate, constraint-count
sweeps and the plain-input regression comparison."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .constraints import LexiconEntry, sample_constraints_from_reference
from .corpus import SentencePair, Vocabulary
from .decoding import DecodeStats, translate_corpus
from .model import TranslationModel
from .phrases import PhraseTable

logger = logging.getLogger(__name__)

MAX_ORDER = 4
DEFAULT_SWEEP_MAX = 7


@dataclass
class EvalReport:
    bleu: float
    copy_success_rate: float
    n_constraints: dict[int, int] = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.bleu <= 100.0:
            raise ValueError("bleu must lie in [0, 100]")
        if not 0.0 <= self.copy_success_rate <= 1.0:
            raise ValueError("copy success rate must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "copy_success_rate": self.copy_success_rate,
            "n_constraints": {str(k): v for k, v in sorted(self.n_constraints.items())},
            "rows": self.rows,
        }


def _ngrams(tokens: Sequence[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


def corpus_bleu(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[Sequence[str]]],
) -> float:
    """Corpus BLEU-4, unsmoothed.

    Modified n-gram precision with per-segment clipping against the maximum
    reference count, geometric mean over orders 1..4, brevity penalty from
    the closest reference length (ties to the shorter). Any order with zero
    matches or zero candidate n-grams gives a score of 0.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"hyps/refs length mismatch {len(hyps)} vs {len(refs)}")
    if any(not ref_group for ref_group in refs):
        raise ValueError("every line needs at least one reference")

    matched = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref_group in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += min(
            (len(ref) for ref in ref_group),
            key=lambda length: (abs(length - len(hyp)), length),
        )
        for order in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp, order)
            if not hyp_counts:
                continue
            clip: Counter = Counter()
            for ref in ref_group:
                ref_counts = _ngrams(ref, order)
                for gram, count in ref_counts.items():
                    clip[gram] = max(clip[gram], count)
            total[order - 1] += sum(hyp_counts.values())
            matched[order - 1] += sum(
                min(count, clip[gram]) for gram, count in hyp_counts.items()
            )

    if any(t == 0 for t in total) or any(m == 0 for m in matched):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / MAX_ORDER
    if hyp_len == 0:
        return 0.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precision)


def copy_success_rate(
    hyps: Sequence[Sequence[str]],
    applied_sets: Sequence[Sequence[LexiconEntry]],
) -> float:
    """Fraction of applied constraint targets occurring contiguously in the
    hypothesis. No applied constraints at all counts as a rate of 1.0."""
    if len(hyps) != len(applied_sets):
        raise ValueError(f"hyps/constraints length mismatch {len(hyps)} vs {len(applied_sets)}")
    applied = 0
    succeeded = 0
    for hyp, entries in zip(hyps, applied_sets):
        for entry in entries:
            applied += 1
            if _contains(hyp, entry.tgt):
                succeeded += 1
    if applied == 0:
        logger.warning("no applied constraints; copy success rate defined as 1.0")
        return 1.0
    return succeeded / applied


def _contains(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    return any(tuple(tokens[i : i + n]) == tuple(phrase) for i in range(len(tokens) - n + 1))


def evaluate_system(
    test_set: Sequence[SentencePair],
    model: TranslationModel,
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
    table: Optional[PhraseTable] = None,
    constraints_per_sentence: int = 0,
    beam_size: int = 4,
    seed: int = 0,
    stats: Optional[DecodeStats] = None,
) -> EvalReport:
    """Translate a test set, with optional sampled constraints, and score it."""
    constraint_sets = None
    if constraints_per_sentence > 0:
        if table is None:
            raise ValueError("constraint sampling requires a phrase table")
        constraint_sets = [
            sample_constraints_from_reference(
                pair, table, constraints_per_sentence, seed=seed * 1000003 + line_no
            )
            for line_no, pair in enumerate(test_set)
        ]
        short = sum(1 for cs in constraint_sets if len(cs) < constraints_per_sentence)
        if short:
            logger.info(
                "%d/%d sentences had fewer than %d eligible constraints",
                short, len(test_set), constraints_per_sentence,
            )
    hyps, applied_sets = translate_corpus(
        [pair.source for pair in test_set],
        constraint_sets,
        model,
        vocab_src,
        vocab_tgt,
        beam_size=beam_size,
        stats=stats,
    )
    surfaces = [list(h.surfaces) for h in hyps]
    refs = [[pair.target_surfaces()] for pair in test_set]
    histogram: dict[int, int] = {}
    for applied in applied_sets:
        histogram[len(applied)] = histogram.get(len(applied), 0) + 1
    return EvalReport(
        bleu=corpus_bleu(surfaces, refs),
        copy_success_rate=copy_success_rate(surfaces, applied_sets),
        n_constraints=histogram,
    )


def replacement_sweep(
    test_set: Sequence[SentencePair],
    table: PhraseTable,
    systems: dict[str, tuple[TranslationModel, Vocabulary, Vocabulary]],
    n_max: int = DEFAULT_SWEEP_MAX,
    beam_size: int = 4,
    seed: int = 0,
    out_tsv: Optional[str | Path] = None,
) -> list[dict]:
    """BLEU and CSR for 0..n_max constraints per sentence, per system.

    Sentences without enough eligible constraints keep as many as could be
    sampled. Returns one row dict per (system, n); `delta` is the BLEU
    difference against that system's n=0 row.
    """
    rows: list[dict] = []
    for name in sorted(systems):
        model, vocab_src, vocab_tgt = systems[name]
        base_bleu = None
        for n in range(n_max + 1):
            report = evaluate_system(
                test_set,
                model,
                vocab_src,
                vocab_tgt,
                table=table,
                constraints_per_sentence=n,
                beam_size=beam_size,
                seed=seed + n,
            )
            if base_bleu is None:
                base_bleu = report.bleu
            rows.append(
                {
                    "system": name,
                    "n": n,
                    "bleu": round(report.bleu, 4),
                    "delta": round(report.bleu - base_bleu, 4),
                    "csr": round(report.copy_success_rate, 6),
                }
            )
    if out_tsv is not None:
        lines = ["system\tn\tbleu\tdelta\tcsr"]
        for row in rows:
            lines.append(
                f"{row['system']}\t{row['n']}\t{row['bleu']:.4f}\t{row['delta']:.4f}\t{row['csr']:.6f}"
            )
        Path(out_tsv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


def regression_compare(
    baseline: tuple[TranslationModel, Vocabulary, Vocabulary],
    augmented: tuple[TranslationModel, Vocabulary, Vocabulary],
    test_set: Sequence[SentencePair],
    beam_size: int = 4,
) -> tuple[EvalReport, EvalReport]:
    """BLEU of both systems on unmodified (non-code-switched) input."""
    reports = []
    for model, vocab_src, vocab_tgt in (baseline, augmented):
        reports.append(
            evaluate_system(test_set, model, vocab_src, vocab_tgt, beam_size=beam_size)
        )
    return reports[0], reports[1]
