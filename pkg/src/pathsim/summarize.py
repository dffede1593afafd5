"""Section summarization: compress a section's full history into m vectors.

A forward pass over [section tokens, m summary slots] under the bottleneck
mask yields the summary-slot hidden states; those vectors later enter the
pathway model as embedding-slot injections. Over-long sections split into
blocks, each contributing its own m vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import torch

from .codec import FULL_HISTORY, InputSection, render_input
from .masks import MaskSpec, bottleneck_mask
from .model import DecoderModel
from .records import PatientRecord
from .vocab import BOS_ID, SUM_ID, Vocab


@dataclass(frozen=True)
class SummaryState:
    """Per (unit, category) blocks of summary vectors, in section order."""

    sections: tuple[tuple[tuple[str, str], tuple[torch.Tensor, ...]], ...]

    def ordered_blocks(self) -> list[tuple[tuple[str, str], torch.Tensor]]:
        return [(key, block) for key, blocks in self.sections for block in blocks]

    def vectors_per_section(self) -> dict[tuple[str, str], int]:
        return {key: sum(b.shape[0] for b in blocks) for key, blocks in self.sections}


@torch.no_grad()
def summarize_section(
    model: DecoderModel,
    vocab: Vocab,
    section_text: str,
    block_size: int | None = None,
) -> list[torch.Tensor]:
    """Summary vectors for one section text; one (m, dim) tensor per block."""
    model.eval()
    m = model.config.summary_tokens
    if block_size is None:
        block_size = model.config.max_seq - m - 1
    if block_size < 1:
        raise ValueError("block_size must leave room for at least one token")
    ids = vocab.encode(section_text)
    blocks = [ids[i : i + block_size] for i in range(0, len(ids), block_size)] or [[]]
    out = []
    for block in blocks:
        seq = [BOS_ID] + block + [SUM_ID] * m
        spec = MaskSpec(n=1 + len(block), m=m, o=0)
        mask = torch.from_numpy(bottleneck_mask(spec))
        result = model(ids=torch.tensor([seq], dtype=torch.long), attn_mask=mask)
        out.append(result.hidden[0, -m:].detach().clone())
    return out


@torch.no_grad()
def summarize_record(
    model: DecoderModel,
    vocab: Vocab,
    record: PatientRecord,
    t: int,
    block_size: int | None = None,
) -> SummaryState:
    """Summaries of every non-empty section over the record's full history."""
    rendered = render_input(record, t, FULL_HISTORY)
    sections = []
    for section in rendered.sections:
        blocks = summarize_section(model, vocab, section.text, block_size)
        sections.append(((section.unit, section.category), tuple(blocks)))
    return SummaryState(sections=tuple(sections))
