"""Experiment pipeline over one TOML config file.

Each stage reads its inputs from the run directory, writes its artifacts
atomically (temp file + rename) and records their sha256 in a manifest.
Nothing written contains timestamps or absolute paths, so reruns with the
same config and seeds produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import aligner, augment, corpus, phrases, synthetic, training
from .constraints import LexiconEntry, sample_constraints_from_reference, save_lexicon
from .corpus import Vocabulary, build_vocab, merge_vocabularies, read_parallel, write_parallel
from .decoding import translate_corpus
from .evaluation import copy_success_rate, corpus_bleu, replacement_sweep
from .model import ModelConfig
from .phrases import PhraseTable
from .training import load_checkpoint, train

logger = logging.getLogger(__name__)

STAGES = ("synth", "align", "table", "augment", "train", "translate", "evaluate", "sweep")

DEFAULT_VOCAB_MAX = 50000


class PipelineError(Exception):
    """Unmet stage precondition; the CLI maps this to exit code 2."""


@dataclass
class PipelineConfig:
    workdir: Path
    seed: int
    sections: dict

    @classmethod
    def load(
        cls,
        path: str | Path,
        workdir: Optional[str] = None,
        seed: Optional[int] = None,
    ) -> "PipelineConfig":
        try:
            raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise PipelineError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise PipelineError(f"invalid config {path}: {exc}")
        wd = workdir if workdir is not None else raw.get("workdir")
        if wd is None:
            raise PipelineError("config must set `workdir` (or pass --workdir)")
        chosen_seed = seed if seed is not None else raw.get("seed", 0)
        return cls(workdir=Path(wd), seed=int(chosen_seed), sections=raw)

    def get(self, section: str, key: str, default):
        return self.sections.get(section, {}).get(key, default)


# Run-directory layout; every path is derived from these helpers so the
# manifest stays relative.
def _paths(workdir: Path) -> dict[str, Path]:
    return {
        "train_src": workdir / "corpus" / "train.src",
        "train_tgt": workdir / "corpus" / "train.tgt",
        "test_src": workdir / "corpus" / "test.src",
        "test_tgt": workdir / "corpus" / "test.tgt",
        "lexicon": workdir / "corpus" / "lexicon.tsv",
        "fwd_ttable": workdir / "align" / "forward.ttable.tsv",
        "rev_ttable": workdir / "align" / "reverse.ttable.tsv",
        "alignments": workdir / "align" / "alignments.txt",
        "table_full": workdir / "table" / "phrase_table_full.tsv",
        "table": workdir / "table" / "phrase_table.tsv",
        "augmented": workdir / "augment" / "augmented.jsonl",
        "vocab_src": workdir / "train" / "vocab_src.tsv",
        "vocab_tgt": workdir / "train" / "vocab_tgt.tsv",
        "checkpoints": workdir / "train" / "checkpoints",
        "final_ckpt": workdir / "train" / "checkpoints" / "final.pt",
        "hyps": workdir / "translate" / "hyps.txt",
        "audit": workdir / "translate" / "audit.jsonl",
        "report": workdir / "evaluate" / "report.json",
        "sweep": workdir / "sweep" / "sweep.tsv",
        "manifest": workdir / "manifest.json",
    }


def _require(paths: dict[str, Path], keys: list[str], stage_hint: str) -> None:
    for key in keys:
        if not paths[key].exists():
            raise PipelineError(
                f"missing {paths[key]}; run `csmt {stage_hint}` first"
            )


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_via(path: Path, save_fn: Callable[[Path], None]) -> None:
    """Run a module save function against a temp file, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    save_fn(tmp)
    os.replace(tmp, path)


def _update_manifest(workdir: Path, artifacts: list[Path]) -> None:
    manifest_path = _paths(workdir)["manifest"]
    entries: dict[str, str] = {}
    if manifest_path.exists():
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    for artifact in artifacts:
        rel = artifact.relative_to(workdir).as_posix()
        entries[rel] = hashlib.sha256(artifact.read_bytes()).hexdigest()
    text = json.dumps(entries, indent=2, sort_keys=True) + "\n"
    _atomic_text(manifest_path, text)


def _read_corpus(paths: dict[str, Path], cfg: PipelineConfig, split: str):
    max_len = cfg.get("model", "max_len", corpus.DEFAULT_MAX_LEN)
    pairs, dropped = read_parallel(paths[f"{split}_src"], paths[f"{split}_tgt"], max_len=max_len)
    if dropped:
        logger.info("dropped %d over-length pairs from %s corpus", dropped, split)
    return pairs


def stage_synth(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    train_pairs, test_pairs, lexicon = synthetic.make_synthetic_task(
        n_train=cfg.get("synthetic", "n_train", 2000),
        vocab_size=cfg.get("synthetic", "vocab_size", synthetic.DEFAULT_VOCAB_SIZE),
        seed=cfg.seed,
        min_len=cfg.get("synthetic", "min_len", synthetic.DEFAULT_MIN_LEN),
        max_len=cfg.get("synthetic", "max_len", synthetic.DEFAULT_MAX_LEN),
        identity=cfg.get("synthetic", "identity", False),
    )
    paths["train_src"].parent.mkdir(parents=True, exist_ok=True)
    # write_parallel writes both sides at once; drive it through temp names
    tmp_src = paths["train_src"].with_name("train.src.tmp")
    tmp_tgt = paths["train_tgt"].with_name("train.tgt.tmp")
    write_parallel(train_pairs, tmp_src, tmp_tgt)
    os.replace(tmp_src, paths["train_src"])
    os.replace(tmp_tgt, paths["train_tgt"])
    tmp_src = paths["test_src"].with_name("test.src.tmp")
    tmp_tgt = paths["test_tgt"].with_name("test.tgt.tmp")
    write_parallel(test_pairs, tmp_src, tmp_tgt)
    os.replace(tmp_src, paths["test_src"])
    os.replace(tmp_tgt, paths["test_tgt"])
    _atomic_via(paths["lexicon"], lambda p: save_lexicon(lexicon, p))
    return [paths[k] for k in ("train_src", "train_tgt", "test_src", "test_tgt", "lexicon")]


def stage_align(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["train_src", "train_tgt"], "synth")
    pairs = _read_corpus(paths, cfg, "train")
    iterations = cfg.get("align", "iterations", aligner.DEFAULT_EM_ITERATIONS)
    fwd = aligner.train_ibm1(pairs, iterations=iterations)
    rev = aligner.train_ibm1(pairs, iterations=iterations, reverse=True)
    links = aligner.align_corpus(pairs, fwd, rev)
    _atomic_via(paths["fwd_ttable"], fwd.save)
    _atomic_via(paths["rev_ttable"], rev.save)
    _atomic_via(paths["alignments"], lambda p: aligner.save_alignments(links, p))
    return [paths[k] for k in ("fwd_ttable", "rev_ttable", "alignments")]


def stage_table(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["alignments"], "align")
    pairs = _read_corpus(paths, cfg, "train")
    links = aligner.load_alignments(paths["alignments"])
    table = phrases.build_phrase_table(
        pairs,
        links,
        max_tgt=cfg.get("table", "max_tgt_len", phrases.DEFAULT_MAX_TGT_PHRASE_LEN),
    )
    pruned = phrases.prune_table(
        table, threshold=cfg.get("table", "prune_threshold", phrases.DEFAULT_PRUNE_THRESHOLD)
    )
    _atomic_via(paths["table_full"], table.save)
    _atomic_via(paths["table"], pruned.save)
    return [paths["table_full"], paths["table"]]


def stage_augment(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["table"], "table")
    _require(paths, ["alignments"], "align")
    pairs = _read_corpus(paths, cfg, "train")
    links = aligner.load_alignments(paths["alignments"])
    table = PhraseTable.load(paths["table"])
    index = augment.build_match_index(pairs, table, links)
    sampled = augment.sample_augmented(
        index,
        k1=cfg.get("augment", "k1", augment.DEFAULT_K1),
        k2=cfg.get("augment", "k2", augment.DEFAULT_K2),
        seed=cfg.seed,
    )
    logger.info("sampled %d augmented pairs", len(sampled))
    _atomic_via(paths["augmented"], lambda p: augment.save_augmented(sampled, p))
    return [paths["augmented"]]


def _model_config(cfg: PipelineConfig) -> ModelConfig:
    section = cfg.sections.get("model", {})
    return ModelConfig(**{k: section[k] for k in section})


def stage_train(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["train_src", "train_tgt"], "synth")
    use_augmented = cfg.get("train", "use_augmented", True)
    pairs = _read_corpus(paths, cfg, "train")

    vocab_max = cfg.get("train", "vocab_max", DEFAULT_VOCAB_MAX)
    vocab_src = build_vocab((p.source for p in pairs), vocab_max)
    vocab_tgt = build_vocab((p.target for p in pairs), vocab_max)

    model_cfg = _model_config(cfg)
    if model_cfg.vocab_mode == "merged":
        merged = merge_vocabularies(vocab_src, vocab_tgt)
        vocab_src = vocab_tgt = merged

    if use_augmented:
        _require(paths, ["augmented"], "augment")
        augmented = augment.load_augmented(paths["augmented"])
        training_set = augment.build_training_set(pairs, augmented)
    else:
        training_set = list(pairs)

    _atomic_via(paths["vocab_src"], vocab_src.save)
    _atomic_via(paths["vocab_tgt"], vocab_tgt.save)
    train(
        training_set,
        vocab_src,
        vocab_tgt,
        model_cfg,
        epochs=cfg.get("train", "epochs", training.DEFAULT_EPOCHS),
        batch_size=cfg.get("train", "batch_size", training.DEFAULT_BATCH_SIZE),
        seed=cfg.seed,
        checkpoint_dir=paths["checkpoints"],
    )
    written = [paths["vocab_src"], paths["vocab_tgt"]]
    written.extend(sorted(paths["checkpoints"].glob("*.json")))
    written.extend(sorted(paths["checkpoints"].glob("*.pt")))
    return written


def _load_system(paths: dict[str, Path]):
    _require(paths, ["final_ckpt", "vocab_src", "vocab_tgt"], "train")
    model, _ = load_checkpoint(paths["final_ckpt"])
    vocab_src = Vocabulary.load(paths["vocab_src"])
    vocab_tgt = Vocabulary.load(paths["vocab_tgt"])
    return model, vocab_src, vocab_tgt


def stage_translate(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["test_src", "test_tgt"], "synth")
    model, vocab_src, vocab_tgt = _load_system(paths)
    test_pairs = _read_corpus(paths, cfg, "test")

    n_constraints = cfg.get("translate", "constraints_per_sentence", 0)
    constraint_sets = None
    if n_constraints > 0:
        _require(paths, ["table"], "table")
        table = PhraseTable.load(paths["table"])
        constraint_sets = [
            sample_constraints_from_reference(
                pair, table, n_constraints, seed=cfg.seed * 1000003 + line_no
            )
            for line_no, pair in enumerate(test_pairs)
        ]

    paths["hyps"].parent.mkdir(parents=True, exist_ok=True)
    tmp_hyps = paths["hyps"].with_name("hyps.txt.tmp")
    tmp_audit = paths["audit"].with_name("audit.jsonl.tmp")
    translate_corpus(
        [pair.source for pair in test_pairs],
        constraint_sets,
        model,
        vocab_src,
        vocab_tgt,
        beam_size=cfg.get("translate", "beam_size", 4),
        max_len=cfg.get("translate", "max_len", None),
        out_path=tmp_hyps,
        audit_path=tmp_audit,
    )
    os.replace(tmp_hyps, paths["hyps"])
    os.replace(tmp_audit, paths["audit"])
    return [paths["hyps"], paths["audit"]]


def stage_evaluate(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["hyps", "audit"], "translate")
    _require(paths, ["test_tgt"], "synth")

    hyps = [line.split() for line in paths["hyps"].read_text(encoding="utf-8").splitlines()]
    refs = [
        [line.split()] for line in paths["test_tgt"].read_text(encoding="utf-8").splitlines()
    ]
    applied_sets = []
    for line in paths["audit"].read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        applied_sets.append(
            [
                LexiconEntry(tuple(src.split()), tuple(tgt.split()))
                for src, tgt in record["applied"]
            ]
        )
    histogram: dict[str, int] = {}
    for applied in applied_sets:
        key = str(len(applied))
        histogram[key] = histogram.get(key, 0) + 1
    report = {
        "bleu": round(corpus_bleu(hyps, refs), 4),
        "copy_success_rate": round(copy_success_rate(hyps, applied_sets), 6),
        "n_constraints": dict(sorted(histogram.items())),
        "n_sentences": len(hyps),
    }
    _atomic_text(paths["report"], json.dumps(report, indent=2, sort_keys=True) + "\n")
    return [paths["report"]]


def stage_sweep(cfg: PipelineConfig) -> list[Path]:
    paths = _paths(cfg.workdir)
    _require(paths, ["test_src", "test_tgt"], "synth")
    _require(paths, ["table"], "table")
    model, vocab_src, vocab_tgt = _load_system(paths)
    test_pairs = _read_corpus(paths, cfg, "test")
    table = PhraseTable.load(paths["table"])

    paths["sweep"].parent.mkdir(parents=True, exist_ok=True)
    tmp = paths["sweep"].with_name("sweep.tsv.tmp")
    replacement_sweep(
        test_pairs,
        table,
        {model.cfg.vocab_mode: (model, vocab_src, vocab_tgt)},
        n_max=cfg.get("sweep", "n_max", 7),
        beam_size=cfg.get("sweep", "beam_size", cfg.get("translate", "beam_size", 4)),
        seed=cfg.seed,
        out_tsv=tmp,
    )
    os.replace(tmp, paths["sweep"])
    return [paths["sweep"]]


_STAGE_FNS: dict[str, Callable[[PipelineConfig], list[Path]]] = {
    "synth": stage_synth,
    "align": stage_align,
    "table": stage_table,
    "augment": stage_augment,
    "train": stage_train,
    "translate": stage_translate,
    "evaluate": stage_evaluate,
    "sweep": stage_sweep,
}


def run_stage(stage: str, cfg: PipelineConfig) -> list[Path]:
    """Run one stage and record its artifacts in the manifest."""
    if stage not in _STAGE_FNS:
        raise PipelineError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    artifacts = _STAGE_FNS[stage](cfg)
    _update_manifest(cfg.workdir, artifacts)
    logger.info("stage %s wrote %d artifacts", stage, len(artifacts))
    return artifacts
