"""Pathway-model input assembly for the three variants.

TEXT feeds the windowed rendering as tokens. SUMM feeds the static header
and LOS status as tokens plus one separator-delimited group of summary
vectors per section block, injected at embedding slots. SUMM_TEXT appends
the recent-window text after the summaries. Input-dropping augmentation
(one third text-dropped, one third summaries-dropped) applies only when a
drop draw is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .codec import FULL_HISTORY, RenderConfig, RenderedInput, render_input
from .model import VARIANT_SUMM, VARIANT_SUMM_TEXT, VARIANT_TEXT
from .records import PatientRecord, UNITS
from .summarize import SummaryState
from .training import TrainSample
from .vocab import BOS_ID, EOS_ID, SEP_ID, SUM_ID, Vocab

DROP_NONE = "none"
DROP_TEXT = "text"
DROP_SUMMARIES = "summaries"


def draw_drop(rng: np.random.Generator) -> str:
    """One third of samples drop the text input, one third the summaries."""
    u = rng.random()
    if u < 1 / 3:
        return DROP_TEXT
    if u < 2 / 3:
        return DROP_SUMMARIES
    return DROP_NONE


def status_text(rendered: RenderedInput, include_los: bool = True) -> str:
    """Header plus LOS-only unit blocks (the non-summarized state)."""
    lines = [rendered.header] if rendered.header else []
    if include_los:
        los = dict(rendered.los_lines)
        for unit in UNITS:
            if unit in los:
                lines.append(f"'{unit}':")
                lines.append(los[unit])
    return "\n".join(lines)


def body_text(rendered: RenderedInput) -> str:
    """Unit blocks (LOS lines plus feature sections) without the header."""
    los = dict(rendered.los_lines)
    lines: list[str] = []
    for unit in UNITS:
        unit_sections = [s for s in rendered.sections if s.unit == unit]
        if unit not in los and not unit_sections:
            continue
        lines.append(f"'{unit}':")
        if unit in los:
            lines.append(los[unit])
        for section in unit_sections:
            lines.append(f"  '{section.category}':")
            lines.extend(section.lines)
    return "\n".join(lines)


@dataclass
class AssembledInput:
    """A ready prompt: token ids plus embedding-slot injections."""

    prompt_ids: list[int]
    injections: tuple[tuple[int, torch.Tensor], ...] = ()
    context_text: str = ""

    @property
    def input_tokens(self) -> int:
        return len(self.prompt_ids)

    def to_sample(self, target_ids: Sequence[int]) -> TrainSample:
        ids = [*self.prompt_ids, *target_ids, EOS_ID]
        return TrainSample(ids=ids, loss_start=len(self.prompt_ids), injections=self.injections)

    def prompt_embeds(self, model) -> torch.Tensor:
        embeds = model.embed_tokens(torch.tensor(self.prompt_ids, dtype=torch.long))
        if self.injections:
            embeds = embeds.clone()
            for pos, vec in self.injections:
                embeds[pos] = vec.to(embeds.dtype)
        return embeds


def assemble_pathway_input(
    record: PatientRecord,
    t: int,
    variant: str,
    vocab: Vocab,
    render_cfg: RenderConfig,
    summaries: SummaryState | None = None,
    rng: np.random.Generator | None = None,
    drop: str = DROP_NONE,
    with_context_accounting: bool = False,
) -> AssembledInput:
    """Build the pathway prompt for one (record, t) point.

    ``rng`` feeds the LOS noise mode only; summaries must be precomputed for
    the summary variants. ``drop`` degrades SUMM_TEXT to its text-only or
    summary-only form (training augmentation).
    """
    if variant == VARIANT_TEXT:
        drop = DROP_NONE
    if variant in (VARIANT_SUMM, VARIANT_SUMM_TEXT) and drop != DROP_SUMMARIES:
        if summaries is None:
            raise ValueError(f"variant {variant} needs summaries")

    rendered = render_input(record, t, render_cfg, rng)
    ids: list[int] = [BOS_ID]
    injections: list[tuple[int, torch.Tensor]] = []

    use_summaries = variant in (VARIANT_SUMM, VARIANT_SUMM_TEXT) and drop != DROP_SUMMARIES
    use_text = variant == VARIANT_TEXT or (variant == VARIANT_SUMM_TEXT and drop != DROP_TEXT)

    if variant == VARIANT_TEXT or (use_text and not use_summaries):
        ids.extend(vocab.encode(rendered.text))
    elif use_summaries and not use_text:
        ids.extend(vocab.encode(status_text(rendered, include_los=True)))
    else:  # summaries followed by recent text
        ids.extend(vocab.encode(rendered.header))

    if use_summaries:
        for _key, block in summaries.ordered_blocks():
            ids.append(SEP_ID)
            for vec in block:
                injections.append((len(ids), vec))
                ids.append(SUM_ID)
        if use_text:
            ids.append(SEP_ID)
            ids.extend(vocab.encode(body_text(rendered)))

    ids.append(SEP_ID)

    context_text = ""
    if with_context_accounting:
        if variant == VARIANT_TEXT:
            context_text = rendered.text
        else:
            context_text = render_input(record, t, FULL_HISTORY).text
    return AssembledInput(
        prompt_ids=ids, injections=tuple(injections), context_text=context_text
    )
