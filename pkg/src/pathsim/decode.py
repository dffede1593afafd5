"""Autoregressive sampling with temperature / top-k / top-p controls."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import DecoderModel
from .vocab import EOS_ID


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding controls; temperature 0 switches to greedy argmax."""

    temperature: float = 0.7
    top_k: int = 20
    top_p: float = 0.8
    max_new_tokens: int = 320

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


GREEDY = DecodeConfig(temperature=0.0, top_k=1, top_p=1.0)


def sample_token(
    logits: torch.Tensor,
    cfg: DecodeConfig,
    rng: np.random.Generator | None,
) -> int:
    """Draw one token id from a single position's logits."""
    if cfg.temperature == 0.0 or cfg.top_k == 1:
        return int(torch.argmax(logits).item())
    if rng is None:
        raise ValueError("sampled decoding needs an rng")
    probs = torch.softmax(logits / cfg.temperature, dim=-1)
    values, indices = torch.sort(probs, descending=True)
    values = values[: cfg.top_k]
    indices = indices[: cfg.top_k]
    if cfg.top_p < 1.0:
        cum = torch.cumsum(values, dim=-1)
        keep = int(torch.searchsorted(cum, cfg.top_p).item()) + 1
        values = values[:keep]
        indices = indices[:keep]
    p = (values / values.sum()).double().numpy()
    choice = rng.choice(len(p), p=p / p.sum())
    return int(indices[choice].item())


@torch.no_grad()
def generate(
    model: DecoderModel,
    prompt_ids: torch.Tensor | None = None,
    prompt_embeds: torch.Tensor | None = None,
    cfg: DecodeConfig = GREEDY,
    rng: np.random.Generator | None = None,
    eos_id: int = EOS_ID,
) -> list[int]:
    """Generate token ids until EOS or the cap; the prompt is not returned.

    The prompt may be ids or pre-built embeddings (summary injection); new
    tokens always go through the embedding table.
    """
    model.eval()
    caches = model.new_cache()
    if (prompt_ids is None) == (prompt_embeds is None):
        raise ValueError("pass exactly one of prompt_ids or prompt_embeds")
    if prompt_embeds is not None:
        x = prompt_embeds.unsqueeze(0)
        out = model(embeds=x, caches=caches)
        pos = x.shape[1]
    else:
        x = prompt_ids.unsqueeze(0)
        out = model(ids=x, caches=caches)
        pos = x.shape[1]

    budget = min(cfg.max_new_tokens, model.config.max_seq - pos)
    generated: list[int] = []
    for _ in range(budget):
        token = sample_token(out.logits[0, -1], cfg, rng)
        generated.append(token)
        if token == eos_id:
            break
        step = torch.tensor([[token]], dtype=torch.long)
        out = model(ids=step, caches=caches, pos_offset=pos)
        pos += 1
    return generated
