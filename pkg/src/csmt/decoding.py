"""Beam-search decoding.

Constrained translation is plain preprocessing: the source is rewritten by
`apply_constraints` and then decoded by the SAME search as any other input.
Nothing here inspects constraints, so constrained and unconstrained decoding
execute identical control flow (the speed-parity property; `DecodeStats`
exposes the invocation counts the property is asserted on).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .constraints import ConstraintSet, LexiconEntry, apply_constraints
from .corpus import BOS_ID, EOS_ID, PAD_ID, Lang, Token, Vocabulary, encode
from .model import TranslationModel

logger = logging.getLogger(__name__)

DEFAULT_BEAM_SIZE = 4


@dataclass
class DecodeStats:
    """Counters for the speed-parity check: decoder invocations made and
    tokens emitted by the returned hypotheses."""

    decode_steps: int = 0
    emitted_tokens: int = 0

    def steps_per_token(self) -> float:
        return self.decode_steps / max(self.emitted_tokens, 1)


@dataclass(frozen=True)
class Hypothesis:
    """ids are emitted extended-vocabulary ids, EOS included once finished;
    surfaces exclude EOS. The normalized score divides by emitted tokens."""

    ids: tuple[int, ...]
    surfaces: tuple[str, ...]
    log_prob: float
    finished: bool

    def normalized_score(self) -> float:
        return self.log_prob / max(len(self.ids), 1)


@dataclass
class Beam:
    """Hypotheses kept best-first by normalized score, ties by id sequence."""

    hypotheses: list[Hypothesis] = field(default_factory=list)

    def add(self, hyp: Hypothesis) -> None:
        self.hypotheses.append(hyp)
        self.hypotheses.sort(key=lambda h: (-h.normalized_score(), h.ids))

    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def __len__(self) -> int:
        return len(self.hypotheses)


def default_max_len(source_length: int) -> int:
    return 2 * source_length + 5


def _surface_of(token_id: int, n_tgt: int, vocab_src: Vocabulary, vocab_tgt: Vocabulary) -> str:
    if token_id < n_tgt:
        return vocab_tgt.surface_of(token_id)
    return vocab_src.surface_of(token_id - n_tgt)


def _feedback_id(token_id: int, n_tgt: int, vocab_src: Vocabulary, vocab_tgt: Vocabulary) -> int:
    """Decoder input for an emitted id; extended-slot words fall back to
    their target-vocabulary id, or UNK when absent there."""
    if token_id < n_tgt:
        return token_id
    return vocab_tgt.id_of(vocab_src.surface_of(token_id - n_tgt))


def beam_search(
    src_tokens: Sequence[Token],
    model: TranslationModel,
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
    beam_size: int = DEFAULT_BEAM_SIZE,
    max_len: Optional[int] = None,
    stats: Optional[DecodeStats] = None,
) -> Hypothesis:
    """Standard beam search over the model's output distribution.

    Candidates are ranked by summed log probability (equal length, so the
    order matches the length-normalized one), ties resolved by id sequence.
    When nothing finishes within the length budget the best unfinished
    hypothesis is returned with `finished=False`.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    if not src_tokens:
        raise ValueError("empty source")
    model.eval()
    n_tgt = model.n_tgt_vocab

    encoded = encode(src_tokens, vocab_src, vocab_tgt)
    src_ids = torch.tensor([[token_id for token_id, _ in encoded]], dtype=torch.long)
    src_is_tgt = torch.tensor([[lang is Lang.TGT for _, lang in encoded]], dtype=torch.bool)
    with torch.no_grad():
        memory = model.encode(src_ids, src_is_tgt)
    src_pad = src_ids.eq(PAD_ID)

    budget = max_len if max_len is not None else default_max_len(len(src_tokens))
    budget = min(budget, model.cfg.max_len - 1)

    # active entries: (emitted ids, summed log prob, decoder feed ids)
    active: list[tuple[tuple[int, ...], float, list[int]]] = [((), 0.0, [BOS_ID])]
    finished = Beam()

    for _ in range(budget):
        if not active:
            break
        n_active = len(active)
        prefix = torch.tensor([feed for _, _, feed in active], dtype=torch.long)
        with torch.no_grad():
            state = model.decode_step(
                prefix, memory.expand(n_active, -1, -1), src_pad.expand(n_active, -1)
            )
            probs = model.output_distribution(
                state, src_ids.expand(n_active, -1), src_is_tgt.expand(n_active, -1)
            )
        if stats is not None:
            stats.decode_steps += 1
        probs[:, PAD_ID] = 0.0
        probs[:, BOS_ID] = 0.0
        log_probs = probs.log()

        candidates: list[tuple[float, tuple[int, ...], int, int]] = []
        for row, (ids, lp, _) in enumerate(active):
            row_log = log_probs[row].tolist()
            for token_id in torch.nonzero(probs[row], as_tuple=True)[0].tolist():
                candidates.append((lp + row_log[token_id], ids + (token_id,), row, token_id))
        candidates.sort(key=lambda c: (-c[0], c[1]))

        next_active = []
        for score, ids, row, token_id in candidates[:beam_size]:
            if token_id == EOS_ID:
                surfaces = tuple(
                    _surface_of(t, n_tgt, vocab_src, vocab_tgt) for t in ids[:-1]
                )
                finished.add(Hypothesis(ids, surfaces, score, True))
            else:
                feed = active[row][2] + [_feedback_id(token_id, n_tgt, vocab_src, vocab_tgt)]
                next_active.append((ids, score, feed))
        active = next_active

    pool = finished
    if not len(pool):
        pool = Beam()
        for ids, lp, _ in active:
            surfaces = tuple(_surface_of(t, n_tgt, vocab_src, vocab_tgt) for t in ids)
            pool.add(Hypothesis(ids, surfaces, lp, False))
    best = pool.best()
    if stats is not None:
        stats.emitted_tokens += len(best.ids)
    return best


def translate_corpus(
    inputs: Sequence[Sequence[Token]],
    constraint_sets: Optional[Sequence[ConstraintSet]],
    model: TranslationModel,
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
    beam_size: int = DEFAULT_BEAM_SIZE,
    max_len: Optional[int] = None,
    out_path: Optional[str | Path] = None,
    audit_path: Optional[str | Path] = None,
    stats: Optional[DecodeStats] = None,
) -> tuple[list[Hypothesis], list[list[LexiconEntry]]]:
    """Rewrite each input with its constraints, then beam-decode it.

    Writes one hypothesis per line to `out_path` and a JSON-lines audit of
    applied entries and scores to `audit_path` when given.
    """
    if constraint_sets is not None and len(constraint_sets) != len(inputs):
        raise ValueError(
            f"inputs/constraints count mismatch {len(inputs)} vs {len(constraint_sets)}"
        )
    hypotheses: list[Hypothesis] = []
    applied_sets: list[list[LexiconEntry]] = []
    for line_no, tokens in enumerate(inputs):
        if constraint_sets is not None and len(constraint_sets[line_no]) > 0:
            rewritten, applied = apply_constraints(tokens, constraint_sets[line_no])
        else:
            rewritten, applied = list(tokens), []
        hyp = beam_search(
            rewritten, model, vocab_src, vocab_tgt, beam_size, max_len, stats=stats
        )
        hypotheses.append(hyp)
        applied_sets.append(applied)

    if out_path is not None:
        text = "\n".join(" ".join(h.surfaces) for h in hypotheses)
        Path(out_path).write_text(text + "\n" if text else "", encoding="utf-8")
    if audit_path is not None:
        lines = []
        for hyp, applied in zip(hypotheses, applied_sets):
            lines.append(
                json.dumps(
                    {
                        "applied": [[" ".join(e.src), " ".join(e.tgt)] for e in applied],
                        "log_prob": round(hyp.log_prob, 6),
                        "score": round(hyp.normalized_score(), 6),
                        "finished": hyp.finished,
                    },
                    sort_keys=True,
                )
            )
        Path(audit_path).write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")
    return hypotheses, applied_sets
