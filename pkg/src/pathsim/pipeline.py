"""High-level orchestration: cohort -> samples -> trained models -> steppers."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .codec import RenderConfig
from .corpus import build_cohort_vocab, pathway_samples, summarizer_samples
from .decode import DecodeConfig, GREEDY
from .model import DecoderModel, ModelConfig, VARIANT_TEXT
from .records import PatientRecord, label_at
from .sampling import build_weight_table, draw_samples, draw_uniform_points
from .simulate import PathwayStepper
from .training import TrainConfig, TrainSample, train_model
from .vocab import Vocab


@dataclass
class TrainSpec:
    """Everything needed to train one model on one cohort split."""

    variant: str = VARIANT_TEXT
    window: int = 24
    layers: int = 4
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 0  # 0 -> 4 * model_dim
    max_seq: int = 512
    summary_tokens: int = 8
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    optimizer: str = "adamw"
    seed: int = 0
    samples: int = 2000
    val_samples: int = 200
    include_los: bool = True
    los_augment: bool = True
    drop_augment: bool = False
    transition_boost: float = 4.0
    weighted_sampling: bool = True
    val_every: int = 0

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            layers=self.layers,
            heads=self.heads,
            model_dim=self.model_dim,
            ff_dim=self.ff_dim or 4 * self.model_dim,
            max_seq=self.max_seq,
            summary_tokens=self.summary_tokens,
            variant=self.variant,
            text_window_w=self.window,
        )

    def render_config(self) -> RenderConfig:
        return RenderConfig(window_hours=self.window, include_los=self.include_los)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            optimizer=self.optimizer,
            seed=self.seed,
            val_every=self.val_every,
        )


@dataclass
class TrainedModel:
    model: DecoderModel
    vocab: Vocab
    history: list[dict]
    skipped_samples: int = 0

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")

    @property
    def final_val_loss(self) -> float | None:
        for row in reversed(self.history):
            if row["val_loss"] is not None:
                return row["val_loss"]
        return None


def _draw_points(
    records: Sequence[PatientRecord],
    count: int,
    rng: np.random.Generator,
    transition_boost: float,
    weighted: bool = True,
) -> list[tuple[str, int]]:
    if weighted:
        labels = [label_at(r, t) for r in records for t in range(1, r.total_hours + 1)]
        table = build_weight_table(labels, transition_boost)
        return draw_samples(records, table, count, rng)
    return draw_uniform_points(records, count, rng)


def train_pathway(
    records: Sequence[PatientRecord],
    spec: TrainSpec,
    vocab: Vocab | None = None,
    summarizer: DecoderModel | None = None,
    val_records: Sequence[PatientRecord] | None = None,
    curve_path: str | Path | None = None,
) -> TrainedModel:
    """Train a pathway model on (already split) training records."""
    if vocab is None:
        vocab = build_cohort_vocab(records)
    rng = np.random.default_rng(spec.seed)
    points = _draw_points(records, spec.samples, rng, spec.transition_boost, spec.weighted_sampling)
    samples, skipped = pathway_samples(
        records,
        points,
        vocab,
        spec.variant,
        spec.render_config(),
        rng,
        summarizer=summarizer,
        max_len=spec.max_seq,
        drop_augment=spec.drop_augment,
        los_augment=spec.los_augment,
    )
    val_samples: list[TrainSample] = []
    if val_records:
        val_points = draw_uniform_points(val_records, spec.val_samples, rng)
        val_samples, _ = pathway_samples(
            val_records, val_points, vocab, spec.variant, spec.render_config(), rng,
            summarizer=summarizer, max_len=spec.max_seq, los_augment=spec.los_augment,
        )
    torch.manual_seed(spec.seed)
    model = DecoderModel(spec.model_config(len(vocab)))
    history = train_model(
        model, samples, spec.train_config(), val_samples=val_samples or None,
        curve_path=curve_path,
    )
    return TrainedModel(model=model, vocab=vocab, history=history, skipped_samples=skipped)


def train_summarizer(
    records: Sequence[PatientRecord],
    spec: TrainSpec,
    vocab: Vocab | None = None,
    val_records: Sequence[PatientRecord] | None = None,
    curve_path: str | Path | None = None,
) -> TrainedModel:
    """Train the bottleneck summarization model on section samples."""
    if vocab is None:
        vocab = build_cohort_vocab(records)
    rng = np.random.default_rng(spec.seed)
    points = _draw_points(records, spec.samples, rng, spec.transition_boost, spec.weighted_sampling)
    samples, skipped = summarizer_samples(
        records, points, vocab, spec.summary_tokens, max_len=spec.max_seq
    )
    val_samples: list[TrainSample] = []
    if val_records:
        val_points = draw_uniform_points(val_records, spec.val_samples, rng)
        val_samples, _ = summarizer_samples(
            val_records, val_points, vocab, spec.summary_tokens, max_len=spec.max_seq
        )
    torch.manual_seed(spec.seed)
    model = DecoderModel(spec.model_config(len(vocab)))
    history = train_model(
        model, samples, spec.train_config(), val_samples=val_samples or None,
        curve_path=curve_path,
    )
    return TrainedModel(model=model, vocab=vocab, history=history, skipped_samples=skipped)


def make_stepper(
    trained: TrainedModel,
    decode_cfg: DecodeConfig = GREEDY,
    summarizer: DecoderModel | None = None,
    los_override: int | None = None,
) -> PathwayStepper:
    """Simulation stepper: stored-LOS rendering (self-predicted countdown)."""
    spec_window = trained.model.config.text_window_w
    render_cfg = RenderConfig(
        window_hours=spec_window,
        include_los=True,
        los_mode="stored",
        los_override=los_override,
    )
    return PathwayStepper(
        model=trained.model,
        vocab=trained.vocab,
        render_cfg=render_cfg,
        decode_cfg=decode_cfg,
        summarizer=summarizer,
    )


def split_records(
    records: Sequence[PatientRecord],
    ids: frozenset[str],
) -> list[PatientRecord]:
    return [r for r in records if r.patient_id in ids]
