"""Batching, the optimization step, loops, and checkpoints.

A sample is a token sequence plus the index where its loss region begins;
bottleneck samples additionally carry a per-sample attention mask and
summary-injected samples carry replacement vectors for their slots.
Cross-entropy is computed only on positions inside the loss region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .masks import MaskSpec, bottleneck_mask
from .model import DecoderModel, ModelConfig
from .vocab import PAD_ID, Vocab

CHECKPOINT_FORMAT = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainSample:
    ids: list[int]
    loss_start: int
    mask_spec: MaskSpec | None = None  # bottleneck samples only
    injections: tuple[tuple[int, torch.Tensor], ...] = ()  # (position, vector)


@dataclass
class TrainBatch:
    ids: torch.Tensor        # (B, S) long
    loss_mask: torch.Tensor  # (B, S) bool; True where ids[t] is a target
    attn_mask: torch.Tensor | None = None  # (B, S, S) bool; None = causal
    injections: tuple[tuple[int, int, torch.Tensor], ...] = ()  # (row, position, vector)


def collate(samples: Sequence[TrainSample]) -> TrainBatch:
    """Right-pad to a rectangle; padding never receives loss or attention."""
    width = max(len(s.ids) for s in samples)
    ids = torch.full((len(samples), width), PAD_ID, dtype=torch.long)
    loss_mask = torch.zeros((len(samples), width), dtype=torch.bool)
    need_masks = any(s.mask_spec is not None for s in samples)
    attn = torch.zeros((len(samples), width, width), dtype=torch.bool) if need_masks else None
    injections = []
    for row, sample in enumerate(samples):
        length = len(sample.ids)
        ids[row, :length] = torch.tensor(sample.ids, dtype=torch.long)
        loss_mask[row, sample.loss_start : length] = True
        if attn is not None:
            if sample.mask_spec is not None:
                local = torch.from_numpy(bottleneck_mask(sample.mask_spec))
            else:
                local = torch.ones(length, length, dtype=torch.bool).tril()
            attn[row, :length, :length] = local
        for pos, vec in sample.injections:
            injections.append((row, pos, vec))
    return TrainBatch(ids=ids, loss_mask=loss_mask, attn_mask=attn, injections=tuple(injections))


def batch_loss(model: DecoderModel, batch: TrainBatch) -> torch.Tensor:
    """Mean next-token cross-entropy over the loss region (0 when empty)."""
    if batch.injections:
        embeds = model.embed_tokens(batch.ids).clone()
        for row, pos, vec in batch.injections:
            embeds[row, pos] = vec.to(embeds.dtype)
        out = model(embeds=embeds, attn_mask=batch.attn_mask)
    else:
        out = model(ids=batch.ids, attn_mask=batch.attn_mask)
    logits = out.logits[:, :-1]
    targets = batch.ids[:, 1:]
    mask = batch.loss_mask[:, 1:]
    if not bool(mask.any()):
        return out.logits.sum() * 0.0
    ce = torch.nn.functional.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none"
    )
    ce = ce.reshape(targets.shape)
    return (ce * mask).sum() / mask.sum()


def train_step(
    model: DecoderModel,
    batch: TrainBatch,
    optimizer: torch.optim.Optimizer,
    grad_clip: float = 1.0,
) -> float:
    """One optimization step; aborts on a non-finite loss."""
    model.train()
    loss = batch_loss(model, batch)
    value = float(loss.item())
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss {value} on batch of shape {tuple(batch.ids.shape)}"
        )
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return value


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 8
    lr: float = 1e-4
    optimizer: str = "adamw"  # adamw | adam | sgd
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    val_every: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adamw", "adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def make_optimizer(model: DecoderModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr)


@torch.no_grad()
def evaluate_loss(model: DecoderModel, samples: Sequence[TrainSample], batch_size: int = 8) -> float:
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(samples), batch_size):
        batch = collate(samples[start : start + batch_size])
        mask = batch.loss_mask[:, 1:]
        n = int(mask.sum())
        if n == 0:
            continue
        total += float(batch_loss(model, batch)) * n
        count += n
    return total / max(count, 1)


def train_model(
    model: DecoderModel,
    samples: Sequence[TrainSample],
    cfg: TrainConfig,
    val_samples: Sequence[TrainSample] | None = None,
    curve_path: str | Path | None = None,
    start_step: int = 0,
) -> list[dict]:
    """Seeded uniform batches over materialized samples; returns the history."""
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    history: list[dict] = []
    for step in range(start_step, start_step + cfg.steps):
        idx = rng.integers(0, len(samples), size=min(cfg.batch_size, len(samples)))
        batch = collate([samples[i] for i in idx])
        loss = train_step(model, batch, optimizer, cfg.grad_clip)
        row = {"step": step + 1, "loss": loss, "val_loss": None}
        if cfg.val_every and val_samples and (step + 1) % cfg.val_every == 0:
            row["val_loss"] = evaluate_loss(model, val_samples, cfg.batch_size)
        history.append(row)
    if val_samples and (not history or history[-1]["val_loss"] is None):
        history[-1]["val_loss"] = evaluate_loss(model, val_samples, cfg.batch_size)
    if curve_path is not None:
        write_curve(history, curve_path)
    return history


def write_curve(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "val_loss"])
        for row in history:
            writer.writerow([row["step"], f"{row['loss']:.6f}",
                             "" if row["val_loss"] is None else f"{row['val_loss']:.6f}"])


# --- checkpoints --------------------------------------------------------------------

def save_checkpoint(
    path: str | Path,
    model: DecoderModel,
    vocab: Vocab,
    step: int = 0,
    extra: dict | None = None,
) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": model.config.to_dict(),
            "vocab": list(vocab.tokens),
            "state_dict": model.state_dict(),
            "step": step,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[DecoderModel, Vocab, int, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    config = ModelConfig(**payload["config"])
    model = DecoderModel(config)
    model.load_state_dict(payload["state_dict"])
    vocab = Vocab(tokens=tuple(payload["vocab"]))
    return model, vocab, int(payload.get("step", 0)), payload.get("extra", {})
