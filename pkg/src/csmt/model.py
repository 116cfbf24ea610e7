"""Transformer encoder-decoder with an optional copy mechanism.

Three vocabulary modes select how code-switched source tokens are embedded
and how the output distribution is formed:

  merged          one enlarged vocabulary on both sides, plain softmax
  shared          separate vocabularies; target-language tokens appearing on
                  the source side are embedded by the SAME storage as the
                  target-side embedding table (aliasing, no sync step)
  shared_pointer  shared embeddings plus a gated copy distribution built
                  from the head-averaged cross-attention of the final
                  decoder layer

In pointer mode the output distribution covers an extended vocabulary: the
target vocabulary followed by one slot per source-vocabulary word. Source
words absent from the current sentence receive probability exactly 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import DEFAULT_MAX_LEN, PAD_ID

VOCAB_MODES = ("merged", "shared", "shared_pointer")
ACTIVATIONS = ("swish", "relu")


@dataclass
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 256
    vocab_mode: str = "merged"
    confidence: float = 0.9
    warmup: int = 400
    learning_rate: float = 3e-4
    dropout: float = 0.1
    max_len: int = DEFAULT_MAX_LEN
    activation: str = "swish"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 < self.confidence <= 1:
            raise ValueError("confidence must lie in (0, 1]")
        if self.vocab_mode not in VOCAB_MODES:
            raise ValueError(f"vocab_mode must be one of {VOCAB_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ffn": self.d_ffn,
            "vocab_mode": self.vocab_mode,
            "confidence": self.confidence,
            "warmup": self.warmup,
            "learning_rate": self.learning_rate,
            "dropout": self.dropout,
            "max_len": self.max_len,
            "activation": self.activation,
        }


@dataclass
class DecoderStepState:
    """Final-layer decoder state for one step: hidden vector, head-averaged
    cross-attention over source positions, and their weighted sum."""

    hidden: torch.Tensor   # [B, d_model]
    alpha: torch.Tensor    # [B, S], sums to 1 over unpadded source
    context: torch.Tensor  # [B, d_model]


def sinusoidal_positions(max_len: int, d_model: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float32) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(max_len, d_model)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div)
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        query: torch.Tensor,
        memory: torch.Tensor,
        key_padding_mask: Optional[torch.Tensor] = None,
        attn_mask: Optional[torch.Tensor] = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (output [B,Tq,D], attention weights [B,H,Tq,Tk])."""
        bsz, t_q, _ = query.shape
        t_k = memory.shape[1]

        def split(x: torch.Tensor, t: int) -> torch.Tensor:
            return x.view(bsz, t, self.n_heads, self.d_head).transpose(1, 2)

        q = split(self.w_q(query), t_q)
        k = split(self.w_k(memory), t_k)
        v = split(self.w_v(memory), t_k)

        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_head)
        if attn_mask is not None:
            scores = scores.masked_fill(attn_mask, float("-inf"))
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = torch.matmul(self.dropout(weights), v)
        out = out.transpose(1, 2).contiguous().view(bsz, t_q, -1)
        return self.w_o(out), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ffn: int, dropout: float, activation: str):
        super().__init__()
        self.inner = nn.Linear(d_model, d_ffn)
        self.outer = nn.Linear(d_ffn, d_model)
        self.dropout = nn.Dropout(dropout)
        self.activation = F.silu if activation == "swish" else F.relu

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(self.dropout(self.activation(self.inner(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout, cfg.activation)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        attn, _ = self.self_attn(x, x, key_padding_mask=pad_mask)
        x = self.norm1(x + self.dropout(attn))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout, cfg.activation)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        causal_mask: torch.Tensor,
        src_pad_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        attn, _ = self.self_attn(x, x, attn_mask=causal_mask)
        x = self.norm1(x + self.dropout(attn))
        cross, cross_weights = self.cross_attn(x, memory, key_padding_mask=src_pad_mask)
        x = self.norm2(x + self.dropout(cross))
        x = self.norm3(x + self.dropout(self.ffn(x)))
        return x, cross_weights


class TranslationModel(nn.Module):
    """Encoder-decoder over code-switched input.

    `n_src_vocab`/`n_tgt_vocab` are the vocabulary sizes the embedding
    tables cover; in merged mode pass the merged size for both.
    """

    def __init__(self, cfg: ModelConfig, n_src_vocab: int, n_tgt_vocab: int):
        super().__init__()
        self.cfg = cfg
        self.n_src_vocab = n_src_vocab
        self.n_tgt_vocab = n_tgt_vocab
        if cfg.vocab_mode == "merged" and n_src_vocab != n_tgt_vocab:
            raise ValueError("merged mode requires one vocabulary size on both sides")

        self.tgt_embedding = nn.Embedding(n_tgt_vocab, cfg.d_model, padding_idx=PAD_ID)
        # In shared modes this table embeds source-language tokens only;
        # TGT-language tokens on the source side are looked up in
        # tgt_embedding itself, aliasing its storage.
        self.src_embedding = nn.Embedding(n_src_vocab, cfg.d_model, padding_idx=PAD_ID)

        nn.init.normal_(self.src_embedding.weight, mean=0.0, std=cfg.d_model ** -0.5)
        nn.init.normal_(self.tgt_embedding.weight, mean=0.0, std=cfg.d_model ** -0.5)
        with torch.no_grad():
            self.src_embedding.weight[PAD_ID].zero_()
            self.tgt_embedding.weight[PAD_ID].zero_()

        self.register_buffer("positions", sinusoidal_positions(cfg.max_len + 2, cfg.d_model))
        self.input_dropout = nn.Dropout(cfg.dropout)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers))
        self.output_projection = nn.Linear(cfg.d_model, n_tgt_vocab, bias=False)

        if cfg.vocab_mode == "shared_pointer":
            self.gate_context = nn.Linear(cfg.d_model, 1, bias=False)  # W_p
            self.gate_hidden = nn.Linear(cfg.d_model, 1, bias=False)   # W_q
            self.gate_bias = nn.Parameter(torch.zeros(1))              # b_r

    @property
    def extended_vocab_size(self) -> int:
        return self.n_tgt_vocab + self.n_src_vocab

    def embed_source(self, src_ids: torch.Tensor, src_is_tgt: torch.Tensor) -> torch.Tensor:
        if self.cfg.vocab_mode == "merged":
            emb = self.src_embedding(src_ids)
        else:
            src_part = self.src_embedding(src_ids.clamp(max=self.n_src_vocab - 1))
            tgt_part = self.tgt_embedding(src_ids.clamp(max=self.n_tgt_vocab - 1))
            emb = torch.where(src_is_tgt.unsqueeze(-1), tgt_part, src_part)
        return emb * math.sqrt(self.cfg.d_model)

    def encode(self, src_ids: torch.Tensor, src_is_tgt: torch.Tensor) -> torch.Tensor:
        """Source hidden states [B, S, d_model]."""
        if src_ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"source length {src_ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        pad_mask = src_ids.eq(PAD_ID)
        x = self.embed_source(src_ids, src_is_tgt) + self.positions[: src_ids.shape[1]]
        x = self.input_dropout(x)
        for layer in self.encoder_layers:
            x = layer(x, pad_mask)
        return x

    def decode(
        self,
        tgt_ids: torch.Tensor,
        memory: torch.Tensor,
        src_pad_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """All decoder positions at once under a causal mask.

        Returns final-layer hidden states [B, T, D] and the final layer's
        head-averaged cross-attention weights [B, T, S].
        """
        if tgt_ids.shape[1] == 0:
            raise ValueError("decoder prefix must be non-empty")
        if tgt_ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"target length {tgt_ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        t = tgt_ids.shape[1]
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool, device=tgt_ids.device), diagonal=1)
        x = self.tgt_embedding(tgt_ids) * math.sqrt(self.cfg.d_model)
        x = self.input_dropout(x + self.positions[:t])
        cross_weights = None
        for layer in self.decoder_layers:
            x, cross_weights = layer(x, memory, causal, src_pad_mask)
        alpha = cross_weights.mean(dim=1)  # average over heads
        return x, alpha

    def decode_step(
        self,
        prefix_ids: torch.Tensor,
        memory: torch.Tensor,
        src_pad_mask: torch.Tensor,
    ) -> DecoderStepState:
        """State of the LAST prefix position (the next-token query)."""
        hidden, alpha = self.decode(prefix_ids, memory, src_pad_mask)
        h_last = hidden[:, -1]
        a_last = alpha[:, -1]
        context = torch.bmm(a_last.unsqueeze(1), memory).squeeze(1)
        return DecoderStepState(hidden=h_last, alpha=a_last, context=context)

    def predict_distribution(self, hidden: torch.Tensor) -> torch.Tensor:
        """Softmax over the target vocabulary (generation path)."""
        return torch.softmax(self.output_projection(hidden), dim=-1)

    def copy_gate(self, context: torch.Tensor, hidden: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(
            self.gate_context(context) + self.gate_hidden(hidden) + self.gate_bias
        )

    def extended_slots(self, src_ids: torch.Tensor, src_is_tgt: torch.Tensor) -> torch.Tensor:
        """Extended-vocabulary slot of each source position.

        Target-language tokens share their target-vocabulary slot; source
        words get a dedicated slot after the target block.
        """
        return torch.where(src_is_tgt, src_ids, src_ids + self.n_tgt_vocab)

    def copy_distribution(
        self,
        alpha: torch.Tensor,
        src_ids: torch.Tensor,
        src_is_tgt: torch.Tensor,
    ) -> torch.Tensor:
        """Scatter attention mass onto extended slots, summed per type.

        alpha may be [B, S] or [B, T, S]; the result has the matching shape
        with the last axis replaced by the extended vocabulary.
        """
        squeeze = alpha.dim() == 2
        if squeeze:
            alpha = alpha.unsqueeze(1)
        bsz, t, s = alpha.shape
        slots = self.extended_slots(src_ids, src_is_tgt)
        mass = alpha * src_ids.ne(PAD_ID).unsqueeze(1)
        p_copy = alpha.new_zeros(bsz, t, self.extended_vocab_size)
        p_copy.scatter_add_(2, slots.unsqueeze(1).expand(bsz, t, s), mass)
        return p_copy.squeeze(1) if squeeze else p_copy

    def output_distribution(
        self,
        state: DecoderStepState,
        src_ids: torch.Tensor,
        src_is_tgt: torch.Tensor,
    ) -> torch.Tensor:
        """Next-token distribution for one step.

        Pointer mode mixes the copy and generation distributions,
        P = (1-g) * P_copy + g * P_predict, over the extended vocabulary;
        other modes return the plain generation softmax.
        """
        p_predict = self.predict_distribution(state.hidden)
        if self.cfg.vocab_mode != "shared_pointer":
            return p_predict
        g = self.copy_gate(state.context, state.hidden)
        p_copy = self.copy_distribution(state.alpha, src_ids, src_is_tgt)
        padded = F.pad(p_predict, (0, self.n_src_vocab))
        return (1.0 - g) * p_copy + g * padded

    def sequence_distribution(
        self,
        src_ids: torch.Tensor,
        src_is_tgt: torch.Tensor,
        tgt_in: torch.Tensor,
    ) -> torch.Tensor:
        """Distributions for every decoder position, [B, T, V or V_ext]."""
        memory = self.encode(src_ids, src_is_tgt)
        src_pad = src_ids.eq(PAD_ID)
        hidden, alpha = self.decode(tgt_in, memory, src_pad)
        p_predict = self.predict_distribution(hidden)
        if self.cfg.vocab_mode != "shared_pointer":
            return p_predict
        context = torch.bmm(alpha, memory)
        g = self.copy_gate(context, hidden)
        p_copy = self.copy_distribution(alpha, src_ids, src_is_tgt)
        padded = F.pad(p_predict, (0, self.n_src_vocab))
        return (1.0 - g) * p_copy + g * padded


def smoothed_targets(
    labels: torch.Tensor,
    n_tgt_vocab: int,
    n_total: int,
    confidence: float,
    dtype: torch.dtype = None,
) -> torch.Tensor:
    """Label-smoothed target distribution per position.

    The gold target-vocabulary id keeps `confidence`; the remainder is
    spread uniformly over the other target slots except PAD. Extended
    (source-word) slots never receive smoothing mass.
    """
    bsz, t = labels.shape
    smooth = (1.0 - confidence) / max(n_tgt_vocab - 2, 1)
    q = torch.zeros(
        bsz, t, n_total, dtype=dtype or torch.get_default_dtype(), device=labels.device
    )
    q[..., :n_tgt_vocab] = smooth
    q[..., PAD_ID] = 0.0
    q.scatter_(2, labels.unsqueeze(-1), confidence)
    return q


def training_loss(
    model: TranslationModel,
    src_ids: torch.Tensor,
    src_is_tgt: torch.Tensor,
    tgt_in: torch.Tensor,
    labels: torch.Tensor,
) -> torch.Tensor:
    """Label-smoothed cross-entropy, averaged over non-PAD target tokens."""
    token_mask = labels.ne(PAD_ID)
    if not bool(token_mask.any()):
        raise ValueError("batch contains no non-PAD target tokens")
    probs = model.sequence_distribution(src_ids, src_is_tgt, tgt_in)
    q = smoothed_targets(
        labels, model.n_tgt_vocab, probs.shape[-1], model.cfg.confidence, dtype=probs.dtype
    )
    ce = -(q * probs.clamp(min=1e-9).log()).sum(dim=-1)
    return (ce * token_mask).sum() / token_mask.sum()
