"""From-scratch toy decoder-only transformer with pluggable attention masks.

Pre-norm blocks, learned positional embeddings, and explicit attention math
so masked weights are exactly zero and attention tensors stay inspectable.
Small enough to train on a laptop CPU; not meant to load external weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

VARIANT_TEXT = "TEXT"
VARIANT_SUMM = "SUMM"
VARIANT_SUMM_TEXT = "SUMM_TEXT"
VARIANTS = (VARIANT_TEXT, VARIANT_SUMM, VARIANT_SUMM_TEXT)


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 512
    max_seq: int = 512
    summary_tokens: int = 8
    variant: str = VARIANT_TEXT
    text_window_w: int = 24

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.summary_tokens < 1 and self.variant != VARIANT_TEXT:
            raise ValueError("summary variants need summary_tokens >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    hidden: torch.Tensor
    attentions: list[torch.Tensor] = field(default_factory=list)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.proj = nn.Linear(dim, dim, bias=False)

    def forward(self, x, mask=None, cache=None, return_attn=False):
        B, T, C = x.shape
        qkv = self.qkv(x).view(B, T, 3, self.heads, self.head_dim)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # (B, H, T, hd)
        if cache is not None:
            if cache.get("k") is not None:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if mask is not None:
            # mask: (Tq, Tk) or (B, Tq, Tk) boolean; False -> -inf -> weight exactly 0
            scores = scores.masked_fill(~mask.unsqueeze(-3 if mask.dim() == 3 else 0), float("-inf"))
        attn = scores.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).contiguous().view(B, T, C)
        out = self.proj(out)
        return (out, attn) if return_attn else (out, None)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim)
        )

    def forward(self, x, mask=None, cache=None, return_attn=False):
        a, attn = self.attn(self.ln1(x), mask=mask, cache=cache, return_attn=return_attn)
        x = x + a
        x = x + self.mlp(self.ln2(x))
        return x, attn


class DecoderModel(nn.Module):
    """Next-token decoder; masks are caller-supplied permission matrices."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.model_dim)
        self.pos_emb = nn.Embedding(config.max_seq, config.model_dim)
        self.blocks = nn.ModuleList(
            Block(config.model_dim, config.heads, config.ff_dim) for _ in range(config.layers)
        )
        self.ln_f = nn.LayerNorm(config.model_dim)
        self.head = nn.Linear(config.model_dim, config.vocab_size, bias=False)
        self.apply(self._init)

    @staticmethod
    def _init(module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_emb(ids)

    def new_cache(self) -> list[dict]:
        return [{"k": None, "v": None} for _ in self.blocks]

    def forward(
        self,
        ids: torch.Tensor | None = None,
        embeds: torch.Tensor | None = None,
        attn_mask: torch.Tensor | None = None,
        caches: list[dict] | None = None,
        pos_offset: int = 0,
        return_attn: bool = False,
    ) -> ForwardOutput:
        """Per-position next-token logits.

        ``attn_mask`` is a boolean permission matrix, (S, S) or (B, S, S);
        None means causal. Rows that would otherwise see nothing are defined
        to attend only to themselves. With ``caches`` (incremental decoding)
        the new tokens attend to everything cached, which is causal by
        construction, and no mask may be passed.
        """
        if (ids is None) == (embeds is None):
            raise ValueError("pass exactly one of ids or embeds")
        x = self.tok_emb(ids) if embeds is None else embeds
        B, T = x.shape[0], x.shape[1]
        if pos_offset + T > self.config.max_seq:
            raise ValueError(f"sequence length {pos_offset + T} exceeds max_seq {self.config.max_seq}")
        positions = torch.arange(pos_offset, pos_offset + T, device=x.device)
        x = x + self.pos_emb(positions)

        if caches is not None:
            if attn_mask is not None:
                raise ValueError("masks are not supported in incremental decoding")
            mask = None
        else:
            if attn_mask is None:
                mask = torch.ones(T, T, dtype=torch.bool, device=x.device).tril()
            else:
                mask = attn_mask.to(device=x.device, dtype=torch.bool).clone()
            # fully-masked rows fall back to self-attention only
            eye = torch.eye(T, dtype=torch.bool, device=x.device)
            rows_empty = ~mask.any(dim=-1, keepdim=True)
            mask = mask | (rows_empty & (eye if mask.dim() == 2 else eye.unsqueeze(0)))

        attentions = []
        for i, block in enumerate(self.blocks):
            cache = caches[i] if caches is not None else None
            x, attn = block(x, mask=mask, cache=cache, return_attn=return_attn)
            if return_attn:
                attentions.append(attn)
        hidden = self.ln_f(x)
        logits = self.head(hidden)
        return ForwardOutput(logits=logits, hidden=hidden, attentions=attentions)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
