"""Next-timestep evaluation over a split, plus the statistic floor baseline.

The baseline samples each feature independently at its empirical label
frequency and fills in training means (numeric) or modes (categorical); it
sets the difficulty floor any trained model must clear.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .assemble import assemble_pathway_input
from .codec import MalformedOutput, RenderConfig, parse_output
from .decode import DecodeConfig, GREEDY, generate
from .metrics import (
    MISSING_MAX_ERROR,
    MetricReport,
    NormStats,
    aggregate_report,
    score_next_step,
)
from .model import DecoderModel, VARIANT_TEXT
from .records import (
    EVENT,
    FeatureKey,
    PatientRecord,
    TimestepOutput,
    label_at,
    snapshot,
)
from .summarize import summarize_record
from .vocab import Vocab

Predictor = Callable[[PatientRecord, int, np.random.Generator | None], tuple[TimestepOutput, dict | None]]


@dataclass(frozen=True)
class StatisticBaseline:
    """Frequency-sampled events with mean/mode values; no model involved."""

    freq: Mapping[FeatureKey, float]
    kinds: Mapping[FeatureKey, str]
    numeric_mean: Mapping[FeatureKey, float]
    categorical_mode: Mapping[FeatureKey, object]

    @classmethod
    def fit(cls, labels: Sequence[TimestepOutput]) -> "StatisticBaseline":
        n = max(len(labels), 1)
        counts: Counter = Counter()
        kinds: dict[FeatureKey, str] = {}
        numeric: dict[FeatureKey, list[float]] = defaultdict(list)
        votes: dict[FeatureKey, Counter] = defaultdict(Counter)
        for label in labels:
            for key in label.events:
                counts[key] += 1
                kinds[key] = EVENT
            for key, value in label.values.items():
                counts[key] += 1
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    kinds[key] = "numeric"
                    numeric[key].append(float(value))
                else:
                    kinds[key] = "categorical"
                    votes[key][value] += 1
        return cls(
            freq={k: c / n for k, c in counts.items()},
            kinds=kinds,
            numeric_mean={k: float(np.mean(v)) for k, v in numeric.items()},
            categorical_mode={
                k: min((v for v, c in ctr.items() if c == max(ctr.values())), key=str)
                for k, ctr in votes.items()
            },
        )

    def predict(self, rng: np.random.Generator) -> TimestepOutput:
        events = set()
        values = {}
        for key, p in self.freq.items():
            if rng.random() >= p:
                continue
            if self.kinds[key] == EVENT:
                events.add(key)
            elif self.kinds[key] == "numeric":
                values[key] = round(self.numeric_mean[key], 2)
            else:
                values[key] = self.categorical_mode[key]
        return TimestepOutput(events=frozenset(events), values=values)

    def as_predictor(self) -> Predictor:
        def predict(record, t, rng):
            return self.predict(rng), None

        return predict


@dataclass
class ModelPredictor:
    """Render -> generate -> parse as a next-step predictor with accounting."""

    model: DecoderModel
    vocab: Vocab
    render_cfg: RenderConfig
    decode_cfg: DecodeConfig = GREEDY
    summarizer: DecoderModel | None = None
    catalog: Mapping[FeatureKey, str] | None = None
    malformed: int = 0

    def __call__(self, record: PatientRecord, t: int, rng) -> tuple[TimestepOutput, dict | None]:
        variant = self.model.config.variant
        summaries = None
        if variant != VARIANT_TEXT:
            if self.summarizer is None:
                raise ValueError(f"variant {variant} needs a summarizer")
            summaries = summarize_record(self.summarizer, self.vocab, record, t)
        assembled = assemble_pathway_input(
            record, t, variant, self.vocab, self.render_cfg,
            summaries=summaries, rng=rng, with_context_accounting=True,
        )
        if assembled.injections:
            with torch.no_grad():
                embeds = assembled.prompt_embeds(self.model)
            ids = generate(self.model, prompt_embeds=embeds, cfg=self.decode_cfg, rng=rng)
        else:
            prompt = torch.tensor(assembled.prompt_ids, dtype=torch.long)
            ids = generate(self.model, prompt_ids=prompt, cfg=self.decode_cfg, rng=rng)
        text = self.vocab.decode(ids)
        try:
            output = parse_output(text, self.catalog).output
        except MalformedOutput:
            self.malformed += 1
            output = TimestepOutput()
        accounting = {
            "context_tokens": len(self.vocab.encode(assembled.context_text)),
            "input_tokens": assembled.input_tokens,
        }
        return output, accounting


def evaluate_next_step(
    predictor: Predictor,
    records: Sequence[PatientRecord],
    points: Sequence[tuple[str, int]],
    stats: NormStats,
    rng: np.random.Generator | None = None,
    missing_policy: str = MISSING_MAX_ERROR,
    annotations: Sequence[str] = (),
) -> MetricReport:
    """Score a predictor on (patient, label-hour) points.

    The predictor sees the snapshot at t-1 and is scored against the label at
    t. An empty point list produces an empty report.
    """
    by_id = {r.patient_id: r for r in records}
    cases = []
    for pid, t in points:
        record = by_id[pid]
        pred, accounting = predictor(snapshot(record, t - 1), t - 1, rng)
        case = score_next_step(pred, label_at(record, t), stats, missing_policy)
        if accounting:
            case.context_tokens = accounting["context_tokens"]
            case.input_tokens = accounting["input_tokens"]
        cases.append(case)
    return aggregate_report(cases, missing_policy, annotations=annotations)
