"""Iterative trajectory rollout: predict the next hour, reintegrate, repeat.

Each step renders the current simulated record (stored LOS only, so the
first step carries no LOS token and later steps carry the model's own
predictions), generates, parses, and applies. Malformed generations are
retried a bounded number of times, then the trajectory fails closed. One
trajectory is strictly sequential; distinct patients can roll out in
parallel against a read-only model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
import torch

from .assemble import assemble_pathway_input
from .codec import (
    ApplyError,
    MalformedOutput,
    ParseDiagnostic,
    RenderConfig,
    apply_output,
    parse_output,
    render_output,
)
from .decode import DecodeConfig, GREEDY, generate
from .model import DecoderModel, VARIANT_TEXT
from .records import (
    DEATH,
    ED_DISCHARGE,
    FeatureKey,
    HOSP_ADMIT,
    HOSP_DISCHARGE,
    PatientRecord,
    TimestepOutput,
    snapshot,
    terminal_kind,
    terminal_kind_of,
)
from .summarize import summarize_record
from .vocab import Vocab

TERMINAL_STEP_CAP = "step_cap"
TERMINAL_PARSE_FAILURE = "parse_failure"


class Stepper(Protocol):
    """Anything that proposes raw next-hour text for a record frontier."""

    def propose(self, record: PatientRecord, t: int, rng: np.random.Generator | None) -> str: ...


@dataclass
class PathwayStepper:
    """Wraps a trained pathway model (and optional summarizer) as a Stepper."""

    model: DecoderModel
    vocab: Vocab
    render_cfg: RenderConfig
    decode_cfg: DecodeConfig = GREEDY
    summarizer: DecoderModel | None = None

    def propose(self, record: PatientRecord, t: int, rng: np.random.Generator | None) -> str:
        variant = self.model.config.variant
        summaries = None
        if variant != VARIANT_TEXT:
            if self.summarizer is None:
                raise ValueError(f"variant {variant} needs a summarizer")
            summaries = summarize_record(self.summarizer, self.vocab, record, t)
        assembled = assemble_pathway_input(
            record, t, variant, self.vocab, self.render_cfg, summaries=summaries, rng=rng
        )
        if assembled.injections:
            with torch.no_grad():
                embeds = assembled.prompt_embeds(self.model)
            ids = generate(self.model, prompt_embeds=embeds, cfg=self.decode_cfg, rng=rng)
        else:
            prompt = torch.tensor(assembled.prompt_ids, dtype=torch.long)
            ids = generate(self.model, prompt_ids=prompt, cfg=self.decode_cfg, rng=rng)
        return self.vocab.decode(ids)


@dataclass
class ScriptedStepper:
    """Deterministic stepper for tests: emits scripted texts in order."""

    texts: Sequence[str]
    calls: int = 0

    def propose(self, record, t, rng) -> str:
        text = self.texts[min(self.calls, len(self.texts) - 1)]
        self.calls += 1
        return text


@dataclass(frozen=True)
class SimConfig:
    """Rollout controls: horizon, stopping set, and parse-retry budget."""

    max_steps: int = 48
    stop_on: frozenset = frozenset({ED_DISCHARGE, HOSP_DISCHARGE, DEATH})
    stop_on_transfer: bool = False
    retry_budget: int = 3
    horizon: int | None = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")


@dataclass(frozen=True)
class TrajStep:
    hour: int
    output: TimestepOutput
    raw_text: str
    diagnostics: tuple[ParseDiagnostic, ...] = ()


@dataclass(frozen=True)
class Trajectory:
    start_hour: int
    steps: tuple[TrajStep, ...]
    terminal: str  # "converged:<kind>" | "step_cap" | "parse_failure"
    record: PatientRecord  # final simulated record

    @property
    def converged(self) -> bool:
        return self.terminal.startswith("converged:")

    def predicted_steps(self) -> list[tuple[int, TimestepOutput]]:
        return [(s.hour, s.output) for s in self.steps]

    def state_kinds(self) -> set[str]:
        kinds: set[str] = set()
        for step in self.steps:
            kinds |= step.output.state
        return kinds


def _stop_kind(out: TimestepOutput, cfg: SimConfig) -> str | None:
    hit = out.state & cfg.stop_on
    if not hit:
        return None
    if (
        hit == {ED_DISCHARGE}
        and HOSP_ADMIT in out.state
        and not cfg.stop_on_transfer
    ):
        return None  # transfer, not a stay end
    terminal = terminal_kind(out.state)
    if terminal in hit:
        return terminal
    return sorted(hit)[0]


def simulate(
    record: PatientRecord,
    t0: int,
    stepper: Stepper,
    cfg: SimConfig,
    rng: np.random.Generator | None = None,
    catalog: Mapping[FeatureKey, str] | None = None,
) -> Trajectory:
    """Roll the record forward from hour t0 until a stop condition.

    History at or before t0 is never rewritten. Every call halts within
    cfg.max_steps regardless of model behaviour.
    """
    current = snapshot(record, t0)
    steps: list[TrajStep] = []
    terminal = TERMINAL_STEP_CAP
    for _ in range(cfg.max_steps):
        t = current.total_hours
        if cfg.horizon is not None and t + 1 > cfg.horizon:
            break
        applied = None
        for _attempt in range(cfg.retry_budget + 1):
            raw = stepper.propose(current, t, rng)
            try:
                result = parse_output(raw, catalog)
                applied = apply_output(current, t, result.output, horizon=cfg.horizon)
            except (MalformedOutput, ApplyError):
                continue
            break
        if applied is None:
            terminal = TERMINAL_PARSE_FAILURE
            break
        steps.append(
            TrajStep(hour=t + 1, output=result.output, raw_text=raw, diagnostics=result.diagnostics)
        )
        current = applied
        ended = terminal_kind_of(current)
        stop = _stop_kind(result.output, cfg)
        if ended is not None:
            terminal = f"converged:{ended}"
            break
        if stop is not None:
            terminal = f"converged:{stop}"
            break
    return Trajectory(start_hour=t0, steps=tuple(steps), terminal=terminal, record=current)


# --- persistence -------------------------------------------------------------------

def trajectory_to_json(traj: Trajectory) -> dict:
    return {
        "patient_id": traj.record.patient_id,
        "start_hour": traj.start_hour,
        "terminal": traj.terminal,
        "steps": [
            {
                "hour": s.hour,
                "raw_text": s.raw_text,
                "output_text": render_output(s.output),
                "diagnostics": [str(d) for d in s.diagnostics],
            }
            for s in traj.steps
        ],
    }


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(trajectory_to_json(traj), sort_keys=True) + "\n")
            count += 1
    return count
