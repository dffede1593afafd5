"""Materialize training corpora and samples from cohort records.

A drawn point (patient, t) means: input is the snapshot at t-1, supervision
is the sparse content of hour t. LOS tokens in training inputs are always
augmented: half the samples drop the token, half carry a +-20% noisy value,
so the ground-truth countdown is never seen verbatim.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Sequence

import numpy as np

from .assemble import DROP_NONE, assemble_pathway_input, draw_drop
from .codec import (
    LOS_MODE_DROPPED,
    LOS_MODE_EXACT,
    LOS_MODE_NOISY,
    RenderConfig,
    render_input,
    render_output,
)
from .masks import MaskSpec
from .model import DecoderModel, VARIANT_SUMM_TEXT, VARIANT_TEXT
from .records import PatientRecord, TimestepOutput, label_at
from .summarize import summarize_record
from .training import TrainSample
from .vocab import BOS_ID, EOS_ID, SUM_ID, Vocab, build_vocab


def corpus_texts(records: Sequence[PatientRecord]) -> list[str]:
    """Deterministic text corpus covering the input and output surfaces."""
    texts = []
    cfg = RenderConfig(window_hours=None, include_los=True, los_mode=LOS_MODE_EXACT)
    for record in records:
        texts.append(render_input(record, record.total_hours, cfg).text)
        for t in range(1, record.total_hours + 1):
            texts.append(render_output(label_at(record, t)))
    return texts


def build_cohort_vocab(records: Sequence[PatientRecord]) -> Vocab:
    return build_vocab(corpus_texts(records))


def _training_render_cfg(base: RenderConfig, rng: np.random.Generator, los_augment: bool) -> RenderConfig:
    if not base.include_los:
        return base
    if not los_augment:
        return replace(base, los_mode=LOS_MODE_EXACT)
    mode = LOS_MODE_DROPPED if rng.random() < 0.5 else LOS_MODE_NOISY
    return replace(base, los_mode=mode)


def pathway_samples(
    records: Sequence[PatientRecord],
    points: Iterable[tuple[str, int]],
    vocab: Vocab,
    variant: str,
    render_cfg: RenderConfig,
    rng: np.random.Generator,
    summarizer: DecoderModel | None = None,
    max_len: int = 512,
    drop_augment: bool = False,
    los_augment: bool = True,
) -> tuple[list[TrainSample], int]:
    """Build next-hour prediction samples; returns (samples, skipped_too_long)."""
    by_id = {r.patient_id: r for r in records}
    samples: list[TrainSample] = []
    skipped = 0
    for pid, t in points:
        # Teacher forcing renders from the full record: the window keeps the
        # text to hours <= t-1, while the ground-truth LOS countdown (which
        # needs the future exit event) stays derivable for augmentation.
        record = by_id[pid]
        cfg = _training_render_cfg(render_cfg, rng, los_augment)
        summaries = None
        if variant != VARIANT_TEXT:
            if summarizer is None:
                raise ValueError("summary variants need a summarizer model")
            summaries = summarize_record(summarizer, vocab, record, t - 1)
        drop = draw_drop(rng) if (drop_augment and variant == VARIANT_SUMM_TEXT) else DROP_NONE
        assembled = assemble_pathway_input(
            record, t - 1, variant, vocab, cfg, summaries=summaries, rng=rng, drop=drop
        )
        target_ids = vocab.encode(render_output(label_at(record, t)))
        sample = assembled.to_sample(target_ids)
        if len(sample.ids) > max_len:
            skipped += 1
            continue
        samples.append(sample)
    return samples, skipped


def summarizer_samples(
    records: Sequence[PatientRecord],
    points: Iterable[tuple[str, int]],
    vocab: Vocab,
    summary_tokens: int,
    max_len: int = 512,
) -> tuple[list[TrainSample], int]:
    """Bottleneck samples: one per non-empty section of each drawn point.

    Sequence layout is [BOS, section tokens, m summary slots, target tokens,
    EOS] under the bottleneck mask; loss covers only the target region.
    """
    by_id = {r.patient_id: r for r in records}
    samples: list[TrainSample] = []
    skipped = 0
    cfg = RenderConfig(window_hours=None, include_los=False)
    for pid, t in points:
        record = by_id[pid]
        label = label_at(record, t)
        rendered = render_input(record, t - 1, cfg)
        for section in rendered.sections:
            key = (section.unit, section.category)
            section_label = _restrict_output(label, key)
            target_ids = vocab.encode(render_output(section_label)) + [EOS_ID]
            section_ids = vocab.encode(section.text)
            n = 1 + len(section_ids)
            ids = [BOS_ID, *section_ids, *([SUM_ID] * summary_tokens), *target_ids]
            if len(ids) > max_len:
                skipped += 1
                continue
            samples.append(
                TrainSample(
                    ids=ids,
                    loss_start=n + summary_tokens,
                    mask_spec=MaskSpec(n=n, m=summary_tokens, o=len(target_ids)),
                )
            )
    return samples, skipped


def _restrict_output(label: TimestepOutput, key: tuple[str, str]) -> TimestepOutput:
    unit, category = key
    events = frozenset(k for k in label.events if (k[0], k[1]) == (unit, category))
    values = {k: v for k, v in label.values.items() if (k[0], k[1]) == (unit, category)}
    return TimestepOutput(events=events, values=values)
