"""Evaluation metrics: event F1, modified MAE/accuracy, token accounting, CIs.

Values are normalized by 1st/99th-percentile clipping and min-max scaling
before error computation. "Modified" scores treat missing or mistimed
predictions as maximally wrong (next-step mode) or skip unmatched instances
(simulation mode); reports are tagged with the mode used. Every metric here
has an independent naive reference in the test suite.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import FeatureKey, NUMERIC, PatientRecord, TimestepOutput

MISSING_MAX_ERROR = "max_error"
MISSING_SKIP = "skip"
MISSING_POLICIES = (MISSING_MAX_ERROR, MISSING_SKIP)

VALUE_ACC_THRESHOLD = 0.1  # normalized error counted as a correct value


class MetricError(ValueError):
    pass


# --- normalization ---------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    """Per-feature 1st/99th percentiles estimated on the training split."""

    ranges: Mapping[FeatureKey, tuple[float, float]]
    unknown_policy: str = "skip"  # or "identity"

    def __post_init__(self):
        for key, (p1, p99) in self.ranges.items():
            if p1 > p99:
                raise MetricError(f"p1 > p99 for {key}")
        if self.unknown_policy not in ("skip", "identity"):
            raise MetricError(f"unknown_policy must be skip or identity")


def fit_norm_stats(
    records: Iterable[PatientRecord],
    unknown_policy: str = "skip",
) -> NormStats:
    values: dict[FeatureKey, list[float]] = defaultdict(list)
    for record in records:
        for key, series in record.iter_features():
            if series.kind == NUMERIC:
                values[key].extend(float(v) for _, v in series.entries)
    ranges = {
        key: (float(np.percentile(vals, 1)), float(np.percentile(vals, 99)))
        for key, vals in values.items()
        if vals
    }
    return NormStats(ranges=ranges, unknown_policy=unknown_policy)


def normalize(key: FeatureKey, value: float, stats: NormStats) -> float | None:
    """Clip to [p1, p99], then min-max scale to [0, 1].

    A degenerate range (p1 == p99) maps every value to 0.5. Unknown features
    follow the stats' policy: None (skip) or clipping to [0, 1] (identity).
    """
    rng = stats.ranges.get(key)
    if rng is None:
        if stats.unknown_policy == "skip":
            return None
        return min(max(float(value), 0.0), 1.0)
    p1, p99 = rng
    if p1 == p99:
        return 0.5
    v = min(max(float(value), p1), p99)
    return (v - p1) / (p99 - p1)


# --- event F1 ---------------------------------------------------------------------

def event_confusion(
    pred: frozenset[FeatureKey] | set[FeatureKey],
    truth: frozenset[FeatureKey] | set[FeatureKey],
) -> dict[FeatureKey, tuple[int, int, int]]:
    """(tp, fp, fn) per feature key for one case."""
    out = {}
    for key in set(pred) | set(truth):
        out[key] = (
            int(key in pred and key in truth),
            int(key in pred and key not in truth),
            int(key not in pred and key in truth),
        )
    return out


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0  # vacuous: nothing to predict, nothing predicted
    return 2 * tp / denom


def aggregate_f1(
    confusions: Iterable[Mapping[FeatureKey, tuple[int, int, int]]],
) -> tuple[float, float, dict[FeatureKey, float]]:
    """(micro, macro, per-feature) F1 from per-case confusion maps.

    Micro pools counts over all cases and features; macro is the unweighted
    mean of per-feature F1 over features that appear in at least one pred or
    truth. With no appearing features at all, both default to 1.0.
    """
    pooled: dict[FeatureKey, list[int]] = defaultdict(lambda: [0, 0, 0])
    for conf in confusions:
        for key, (tp, fp, fn) in conf.items():
            agg = pooled[key]
            agg[0] += tp
            agg[1] += fp
            agg[2] += fn
    appearing = {k: v for k, v in pooled.items() if sum(v) > 0}
    per_feature = {k: _f1(*v) for k, v in appearing.items()}
    micro = _f1(
        sum(v[0] for v in appearing.values()),
        sum(v[1] for v in appearing.values()),
        sum(v[2] for v in appearing.values()),
    )
    macro = sum(per_feature.values()) / len(per_feature) if per_feature else 1.0
    return micro, macro, per_feature


def event_f1(
    cases: Sequence[tuple[Iterable[FeatureKey], Iterable[FeatureKey]]],
) -> tuple[float, float, dict[FeatureKey, float]]:
    return aggregate_f1(event_confusion(set(p), set(t)) for p, t in cases)


# --- modified MAE / accuracy ----------------------------------------------------------

def _nearest_within(
    preds: Sequence[tuple[int, object]], hour: int, tol: int
) -> tuple[int, object] | None:
    """Nearest prediction within |dh| <= tol; ties resolve to the earlier hour."""
    best = None
    for ph, pv in preds:
        dh = abs(ph - hour)
        if dh > tol:
            continue
        if best is None or (dh, ph) < (abs(best[0] - hour), best[0]):
            best = (ph, pv)
    return best


def modified_mae(
    preds: Sequence[tuple[int, float]],
    truth: tuple[int, float],
    value_range: tuple[float, float],
    tol_hours: int = 0,
    missing_policy: str = MISSING_MAX_ERROR,
) -> float | None:
    """Absolute error on normalized values; no within-tolerance prediction
    scores the maximum error 1.0 (or None under the skip policy)."""
    hour, tv = truth
    match = _nearest_within(preds, hour, tol_hours)
    if match is None:
        return 1.0 if missing_policy == MISSING_MAX_ERROR else None
    p1, p99 = value_range
    if p1 == p99:
        return 0.0  # both sides normalize to 0.5

    def norm(v: float) -> float:
        return (min(max(float(v), p1), p99) - p1) / (p99 - p1)

    return abs(norm(match[1]) - norm(tv))


def modified_accuracy(
    preds: Sequence[tuple[int, object]],
    truth: tuple[int, object],
    tol_hours: int = 0,
    missing_policy: str = MISSING_MAX_ERROR,
) -> int | None:
    """1 iff some within-tolerance prediction equals the truth exactly.

    Missing predictions count as incorrect, or are skipped entirely under the
    simulation policy.
    """
    hour, tv = truth
    within = [(ph, pv) for ph, pv in preds if abs(ph - hour) <= tol_hours]
    if not within:
        return 0 if missing_policy == MISSING_MAX_ERROR else None
    return int(any(pv == tv for _, pv in within))


# --- token accounting -------------------------------------------------------------------

def token_accounting(context_token_count: int, input_token_count: int) -> dict[str, int]:
    return {"context_tokens": context_token_count, "input_tokens": input_token_count}


def compression_ratio(section_tokens: int, summary_tokens: int) -> float:
    """Section-level compression: raw section tokens per summary slot."""
    if summary_tokens < 1:
        raise MetricError("summary_tokens must be >= 1")
    return section_tokens / summary_tokens


# --- bootstrap --------------------------------------------------------------------------

def _percentile_linear(sorted_vals: np.ndarray, q: float) -> float:
    """Linear-interpolation percentile (numpy's default method)."""
    n = len(sorted_vals)
    if n == 1:
        return float(sorted_vals[0])
    rank = q / 100.0 * (n - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, n - 1)
    frac = rank - lo
    return float(sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac)


def bootstrap_ci(
    scores: Sequence[float],
    level: float = 0.95,
    resamples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean of per-case scores.

    When the full resample space is no larger than ``resamples`` (n^n small),
    it is enumerated exhaustively, making the interval exact and seed-free;
    otherwise ``resamples`` index matrices are drawn as
    ``rng.integers(0, n, size=(resamples, n))``.
    """
    n = len(scores)
    if n == 0:
        raise MetricError("bootstrap_ci needs at least one score")
    arr = np.asarray(scores, dtype=float)
    if n ** n <= resamples:
        means = np.array(
            [np.mean([arr[i] for i in combo]) for combo in itertools.product(range(n), repeat=n)]
        )
    else:
        if rng is None:
            raise MetricError("sampled bootstrap needs an rng")
        idx = rng.integers(0, n, size=(resamples, n))
        means = arr[idx].mean(axis=1)
    means.sort()
    alpha = (1.0 - level) / 2.0
    return (
        _percentile_linear(means, 100.0 * alpha),
        _percentile_linear(means, 100.0 * (1.0 - alpha)),
    )


# --- per-case scoring and report aggregation ------------------------------------------------

@dataclass
class CaseScore:
    """Raw per-case material later pooled into a MetricReport."""

    confusion: dict[FeatureKey, tuple[int, int, int]] = field(default_factory=dict)
    numeric_errors: dict[FeatureKey, list[float]] = field(default_factory=dict)
    cat_hits: dict[FeatureKey, list[int]] = field(default_factory=dict)
    context_tokens: int | None = None
    input_tokens: int | None = None


def _value_instances(out: TimestepOutput) -> dict[FeatureKey, object]:
    return dict(out.values)


def score_next_step(
    pred: TimestepOutput,
    truth: TimestepOutput,
    stats: NormStats,
    missing_policy: str = MISSING_MAX_ERROR,
) -> CaseScore:
    """Score one predicted hour against its label."""
    if missing_policy not in MISSING_POLICIES:
        raise MetricError(f"unknown missing policy {missing_policy!r}")
    score = CaseScore(confusion=event_confusion(pred.feature_keys(), truth.feature_keys()))
    pred_values = _value_instances(pred)
    for key, tv in _value_instances(truth).items():
        pv = pred_values.get(key)
        if isinstance(tv, (int, float)) and not isinstance(tv, bool):
            rng = stats.ranges.get(key)
            if rng is None:
                if stats.unknown_policy == "skip":
                    continue
                rng = (0.0, 1.0)
            preds = [(0, float(pv))] if isinstance(pv, (int, float)) and not isinstance(pv, bool) else []
            err = modified_mae(preds, (0, float(tv)), rng, 0, missing_policy)
            if err is not None:
                score.numeric_errors.setdefault(key, []).append(err)
        else:
            preds = [(0, pv)] if pv is not None else []
            hit = modified_accuracy(preds, (0, tv), 0, missing_policy)
            if hit is not None:
                score.cat_hits.setdefault(key, []).append(hit)
    return score


def score_window(
    pred_steps: Sequence[tuple[int, TimestepOutput]],
    truth_steps: Sequence[tuple[int, TimestepOutput]],
    stats: NormStats,
    tol_hours: int = 1,
    missing_policy: str = MISSING_SKIP,
    keys: frozenset[FeatureKey] | None = None,
) -> CaseScore:
    """Score a simulated window against ground truth.

    Event presence is scored per (feature, hour) with exact hours; values use
    the +-tolerance matching. ``keys`` restricts scoring to a task's feature
    set.
    """
    if missing_policy not in MISSING_POLICIES:
        raise MetricError(f"unknown missing policy {missing_policy!r}")

    def relevant(key: FeatureKey) -> bool:
        return keys is None or key in keys

    pred_instances = set()
    truth_instances = set()
    pred_series: dict[FeatureKey, list[tuple[int, object]]] = defaultdict(list)
    for hour, out in pred_steps:
        for key in out.feature_keys():
            if relevant(key):
                pred_instances.add((key, hour))
        for key, v in out.values.items():
            if relevant(key):
                pred_series[key].append((hour, v))
    truth_values: list[tuple[FeatureKey, int, object]] = []
    for hour, out in truth_steps:
        for key in out.feature_keys():
            if relevant(key):
                truth_instances.add((key, hour))
        for key, v in out.values.items():
            if relevant(key):
                truth_values.append((key, hour, v))

    confusion: dict[FeatureKey, list[int]] = defaultdict(lambda: [0, 0, 0])
    for key, hour in pred_instances | truth_instances:
        in_p = (key, hour) in pred_instances
        in_t = (key, hour) in truth_instances
        confusion[key][0] += int(in_p and in_t)
        confusion[key][1] += int(in_p and not in_t)
        confusion[key][2] += int(not in_p and in_t)

    score = CaseScore(confusion={k: tuple(v) for k, v in confusion.items()})
    for key, hour, tv in truth_values:
        preds = pred_series.get(key, [])
        if isinstance(tv, (int, float)) and not isinstance(tv, bool):
            rng = stats.ranges.get(key)
            if rng is None:
                if stats.unknown_policy == "skip":
                    continue
                rng = (0.0, 1.0)
            numeric_preds = [
                (h, float(v)) for h, v in preds if isinstance(v, (int, float)) and not isinstance(v, bool)
            ]
            err = modified_mae(numeric_preds, (hour, float(tv)), rng, tol_hours, missing_policy)
            if err is not None:
                score.numeric_errors.setdefault(key, []).append(err)
        else:
            hit = modified_accuracy(preds, (hour, tv), tol_hours, missing_policy)
            if hit is not None:
                score.cat_hits.setdefault(key, []).append(hit)
    return score


@dataclass
class MetricReport:
    """Aggregated metrics for one evaluation run."""

    n_cases: int
    missing_policy: str
    f1_micro: float
    f1_macro: float
    mae_micro: float | None
    mae_macro: float | None
    cat_acc_micro: float | None
    cat_acc_macro: float | None
    value_acc: float | None
    context_tokens: tuple[float, int] | None  # (avg, max)
    input_tokens: tuple[float, int] | None
    per_feature: dict[FeatureKey, dict[str, float]] = field(default_factory=dict)
    extras: dict[str, float] = field(default_factory=dict)
    annotations: tuple[str, ...] = ()

    def to_json(self) -> dict:
        doc = {
            "n_cases": self.n_cases,
            "missing_policy": self.missing_policy,
            "f1_micro": self.f1_micro,
            "f1_macro": self.f1_macro,
            "mae_micro": self.mae_micro,
            "mae_macro": self.mae_macro,
            "cat_acc_micro": self.cat_acc_micro,
            "cat_acc_macro": self.cat_acc_macro,
            "value_acc": self.value_acc,
            "context_tokens": list(self.context_tokens) if self.context_tokens else None,
            "input_tokens": list(self.input_tokens) if self.input_tokens else None,
            "extras": self.extras,
            "annotations": list(self.annotations),
            "per_feature": {"/".join(k): v for k, v in sorted(self.per_feature.items())},
        }
        return doc

    def table(self) -> str:
        def fmt(v):
            if v is None:
                return "n/a"
            if isinstance(v, tuple):
                return f"{v[0]:.1f}/{v[1]}"
            return f"{v:.4f}"

        rows = [
            ("cases", str(self.n_cases)),
            ("event F1 (micro/macro)", f"{fmt(self.f1_micro)} / {fmt(self.f1_macro)}"),
            ("numeric MAE (micro/macro)", f"{fmt(self.mae_micro)} / {fmt(self.mae_macro)}"),
            ("categorical acc (micro/macro)", f"{fmt(self.cat_acc_micro)} / {fmt(self.cat_acc_macro)}"),
            ("value acc", fmt(self.value_acc)),
            ("avg/max context tokens", fmt(self.context_tokens)),
            ("avg/max input tokens", fmt(self.input_tokens)),
        ]
        rows.extend((k, fmt(v)) for k, v in sorted(self.extras.items()))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows)

    def write_per_feature_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "category", "feature", "f1", "mae", "cat_acc", "n_numeric", "n_categorical"])
            for key in sorted(self.per_feature):
                row = self.per_feature[key]
                writer.writerow(
                    [
                        *key,
                        row.get("f1", ""),
                        row.get("mae", ""),
                        row.get("cat_acc", ""),
                        row.get("n_numeric", 0),
                        row.get("n_categorical", 0),
                    ]
                )


def aggregate_report(
    cases: Sequence[CaseScore],
    missing_policy: str,
    extras: Mapping[str, float] | None = None,
    annotations: Sequence[str] = (),
) -> MetricReport:
    f1_micro, f1_macro, per_feature_f1 = aggregate_f1(c.confusion for c in cases)

    numeric: dict[FeatureKey, list[float]] = defaultdict(list)
    cats: dict[FeatureKey, list[int]] = defaultdict(list)
    for case in cases:
        for key, errs in case.numeric_errors.items():
            numeric[key].extend(errs)
        for key, hits in case.cat_hits.items():
            cats[key].extend(hits)

    all_errs = [e for errs in numeric.values() for e in errs]
    all_hits = [h for hits in cats.values() for h in hits]
    mae_micro = float(np.mean(all_errs)) if all_errs else None
    mae_macro = (
        float(np.mean([np.mean(errs) for errs in numeric.values()])) if numeric else None
    )
    cat_acc_micro = float(np.mean(all_hits)) if all_hits else None
    cat_acc_macro = (
        float(np.mean([np.mean(hits) for hits in cats.values()])) if cats else None
    )
    value_instances = [int(e <= VALUE_ACC_THRESHOLD) for e in all_errs] + all_hits
    value_acc = float(np.mean(value_instances)) if value_instances else None

    ctx = [c.context_tokens for c in cases if c.context_tokens is not None]
    inp = [c.input_tokens for c in cases if c.input_tokens is not None]
    context_tokens = (float(np.mean(ctx)), int(max(ctx))) if ctx else None
    input_tokens = (float(np.mean(inp)), int(max(inp))) if inp else None

    per_feature: dict[FeatureKey, dict[str, float]] = {}
    for key, f1 in per_feature_f1.items():
        per_feature.setdefault(key, {})["f1"] = f1
    for key, errs in numeric.items():
        per_feature.setdefault(key, {})["mae"] = float(np.mean(errs))
        per_feature[key]["n_numeric"] = len(errs)
    for key, hits in cats.items():
        per_feature.setdefault(key, {})["cat_acc"] = float(np.mean(hits))
        per_feature[key]["n_categorical"] = len(hits)

    return MetricReport(
        n_cases=len(cases),
        missing_policy=missing_policy,
        f1_micro=f1_micro,
        f1_macro=f1_macro,
        mae_micro=mae_micro,
        mae_macro=mae_macro,
        cat_acc_micro=cat_acc_micro,
        cat_acc_macro=cat_acc_macro,
        value_acc=value_acc,
        context_tokens=context_tokens,
        input_tokens=input_tokens,
        per_feature=per_feature,
        extras=dict(extras or {}),
        annotations=tuple(annotations),
    )


def write_report(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
