"""Training loop, checkpoint serialization and gradient verification."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import random
from pathlib import Path
from typing import Optional, Sequence

import torch

from .corpus import BOS_ID, EOS_ID, Lang, PAD_ID, SentencePair, Vocabulary, encode
from .model import ModelConfig, TranslationModel, training_loss

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_EPOCHS = 5
DEFAULT_BATCH_SIZE = 32


def encode_pair(
    pair: SentencePair, vocab_src: Vocabulary, vocab_tgt: Vocabulary
) -> tuple[list[int], list[bool], list[int]]:
    """Ids and language flags for one pair. Pass the merged vocabulary in
    both slots for merged-mode models."""
    src = encode(pair.source, vocab_src, vocab_tgt)
    src_ids = [token_id for token_id, _ in src]
    src_is_tgt = [lang is Lang.TGT for _, lang in src]
    tgt_ids = [vocab_tgt.id_of(tok.surface) for tok in pair.target]
    return src_ids, src_is_tgt, tgt_ids


def make_batch(
    encoded: Sequence[tuple[list[int], list[bool], list[int]]],
) -> dict[str, torch.Tensor]:
    """Pad a list of encoded pairs into model input tensors.

    Decoder input is BOS-prefixed, labels are EOS-suffixed.
    """
    if not encoded:
        raise ValueError("empty batch")
    s_max = max(len(src) for src, _, _ in encoded)
    t_max = max(len(tgt) for _, _, tgt in encoded) + 1

    src_ids = torch.full((len(encoded), s_max), PAD_ID, dtype=torch.long)
    src_is_tgt = torch.zeros(len(encoded), s_max, dtype=torch.bool)
    tgt_in = torch.full((len(encoded), t_max), PAD_ID, dtype=torch.long)
    labels = torch.full((len(encoded), t_max), PAD_ID, dtype=torch.long)
    for row, (src, flags, tgt) in enumerate(encoded):
        src_ids[row, : len(src)] = torch.tensor(src, dtype=torch.long)
        src_is_tgt[row, : len(flags)] = torch.tensor(flags, dtype=torch.bool)
        tgt_in[row, 0] = BOS_ID
        tgt_in[row, 1 : len(tgt) + 1] = torch.tensor(tgt, dtype=torch.long)
        labels[row, : len(tgt)] = torch.tensor(tgt, dtype=torch.long)
        labels[row, len(tgt)] = EOS_ID
    return {"src_ids": src_ids, "src_is_tgt": src_is_tgt, "tgt_in": tgt_in, "labels": labels}


def warmup_lr(base_lr: float, step: int, warmup: int) -> float:
    """Inverse-square-root schedule with linear warmup, peaking at base_lr."""
    return base_lr * min(step / warmup, math.sqrt(warmup / step))


def train(
    corpus: Sequence[SentencePair],
    vocab_src: Vocabulary,
    vocab_tgt: Vocabulary,
    config: ModelConfig,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    checkpoint_dir: Optional[str | Path] = None,
    log_every: int = 50,
) -> TranslationModel:
    """Train a model from scratch; deterministic for a fixed seed.

    Adam with the warmup schedule of `config`; one checkpoint per epoch when
    `checkpoint_dir` is given, plus `final.pt`. A non-finite loss aborts.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    torch.manual_seed(seed)
    torch.set_num_threads(1)

    model = TranslationModel(config, len(vocab_src), len(vocab_tgt))
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.98), eps=1e-9
    )
    encoded = [encode_pair(pair, vocab_src, vocab_tgt) for pair in corpus]

    meta = {
        "vocab_src_hash": vocab_src.content_hash(),
        "vocab_tgt_hash": vocab_tgt.content_hash(),
        "seed": seed,
        "epochs": epochs,
        "batch_size": batch_size,
    }

    order_rng = random.Random(seed)
    step = 0
    model.train()
    for epoch in range(1, epochs + 1):
        order = list(range(len(encoded)))
        order_rng.shuffle(order)
        epoch_loss, epoch_tokens = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            batch = make_batch([encoded[i] for i in chunk])
            step += 1
            lr = warmup_lr(config.learning_rate, step, config.warmup)
            for group in optimizer.param_groups:
                group["lr"] = lr
            loss = training_loss(model, **batch)
            value = loss.item()
            if not math.isfinite(value):
                raise RuntimeError(f"non-finite loss {value} at step {step} (epoch {epoch})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            n_tokens = int(batch["labels"].ne(PAD_ID).sum())
            epoch_loss += value * n_tokens
            epoch_tokens += n_tokens
            if log_every and step % log_every == 0:
                logger.info("step %d lr %.2e loss %.4f", step, lr, value)
        mean_loss = epoch_loss / max(epoch_tokens, 1)
        logger.info("epoch %d done, mean loss %.4f", epoch, mean_loss)
        if checkpoint_dir is not None:
            save_checkpoint(
                model,
                Path(checkpoint_dir) / f"epoch_{epoch:03d}.pt",
                step=step,
                mean_loss=mean_loss,
                **meta,
            )
    if checkpoint_dir is not None:
        save_checkpoint(
            model, Path(checkpoint_dir) / "final.pt", step=step, mean_loss=mean_loss, **meta
        )
    model.eval()
    return model


def _atomic_bytes(path: Path, writer) -> None:
    # torch.save embeds the archive name in the blob, so the temp name must
    # be deterministic for reruns to produce byte-identical checkpoints
    tmp = str(path.with_name(path.name + ".tmp"))
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    model: TranslationModel,
    path: str | Path,
    step: int = 0,
    seed: int = 0,
    vocab_src_hash: str = "",
    vocab_tgt_hash: str = "",
    mean_loss: Optional[float] = None,
    **extra,
) -> None:
    """Tensor blob at `path` plus a JSON sidecar `path.json` describing it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_bytes(path, lambda tmp: torch.save(model.state_dict(), tmp))
    sidecar = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "n_src_vocab": model.n_src_vocab,
        "n_tgt_vocab": model.n_tgt_vocab,
        "step": step,
        "seed": seed,
        "vocab_src_hash": vocab_src_hash,
        "vocab_tgt_hash": vocab_tgt_hash,
        "mean_loss": mean_loss,
        **extra,
    }
    text = json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    _atomic_bytes(path.with_suffix(".json"), lambda tmp: Path(tmp).write_text(text, encoding="utf-8"))


def load_checkpoint(path: str | Path) -> tuple[TranslationModel, dict]:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if sidecar.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {sidecar.get('version')}")
    config = ModelConfig(**sidecar["config"])
    model = TranslationModel(config, sidecar["n_src_vocab"], sidecar["n_tgt_vocab"])
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model, sidecar


def gradient_check(
    model: TranslationModel,
    batch: dict[str, torch.Tensor],
    epsilon: float = 1e-4,
    samples_per_tensor: int = 10,
    seed: int = 0,
    corrupt: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 copy with dropout disabled; every parameter tensor is
    probed at `samples_per_tensor` coordinates (all, when smaller). Both
    gradients below 1e-6 in magnitude count as exact agreement. `corrupt`
    offsets the analytic gradient to prove the harness can fail.
    """
    probe = copy.deepcopy(model).double().eval()

    def compute_loss() -> torch.Tensor:
        return training_loss(probe, **batch)

    loss = compute_loss()
    probe.zero_grad()
    loss.backward()

    rng = random.Random(seed)
    max_err = 0.0
    for name, param in probe.named_parameters():
        flat = param.detach().view(-1)
        grad = param.grad.view(-1) if param.grad is not None else torch.zeros_like(flat)
        n = flat.numel()
        coords = list(range(n)) if n <= samples_per_tensor else rng.sample(range(n), samples_per_tensor)
        for idx in coords:
            analytic = grad[idx].item()
            if corrupt:
                analytic += 0.5
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + epsilon
                plus = compute_loss().item()
                flat[idx] = original - epsilon
                minus = compute_loss().item()
                flat[idx] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            if abs(analytic) < 1e-6 and abs(numeric) < 1e-6:
                err = 0.0
            else:
                err = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
            if err > max_err:
                max_err = err
                logger.debug("gradient check %s[%d]: analytic %.3e numeric %.3e", name, idx, analytic, numeric)
    return max_err
