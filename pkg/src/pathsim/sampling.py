"""Rarity-weighted training-sample stream and patient-level splits.

Training time points are drawn proportionally to a weight that grows with the
rarity of the features in the hour's label and is boosted on hours containing
admissions, discharges, or deaths. Validation and test points are drawn
uniformly. The exact weight formula is an artifact choice (documented below);
only its log-scaled, rarity-increasing shape is prescribed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import FeatureKey, PatientRecord, TimestepOutput, label_at

DEFAULT_TRANSITION_BOOST = 4.0


@dataclass(frozen=True)
class SampleWeightTable:
    """Empirical per-feature label frequencies plus the transition multiplier."""

    event_freq: Mapping[FeatureKey, float]
    transition_boost: float = DEFAULT_TRANSITION_BOOST
    default_freq: float = 1.0

    def __post_init__(self):
        for key, freq in self.event_freq.items():
            if not 0.0 < freq <= 1.0:
                raise ValueError(f"frequency for {key} must lie in (0, 1], got {freq}")
        if self.transition_boost < 1.0:
            raise ValueError("transition_boost must be >= 1")
        if not 0.0 < self.default_freq <= 1.0:
            raise ValueError("default_freq must lie in (0, 1]")

    def freq(self, key: FeatureKey) -> float:
        return self.event_freq.get(key, self.default_freq)


def build_weight_table(
    labels: Sequence[TimestepOutput],
    transition_boost: float = DEFAULT_TRANSITION_BOOST,
) -> SampleWeightTable:
    """Frequencies over training labels; unseen features fall back to 1/N."""
    counts: dict[FeatureKey, int] = {}
    for label in labels:
        for key in label.feature_keys():
            counts[key] = counts.get(key, 0) + 1
    n = max(len(labels), 1)
    return SampleWeightTable(
        event_freq={k: c / n for k, c in counts.items()},
        transition_boost=transition_boost,
        default_freq=1.0 / n,
    )


def compute_weight(label: TimestepOutput, table: SampleWeightTable) -> float:
    """weight = (1 + sum_f log(1 + 1/freq(f))) * boost-if-transition."""
    total = 1.0 + sum(math.log1p(1.0 / table.freq(key)) for key in label.feature_keys())
    if label.state:
        total *= table.transition_boost
    return total


def enumerate_timepoints(records: Iterable[PatientRecord]) -> list[tuple[str, int]]:
    """All (patient_id, t) pairs with a label, t in [1, total_hours]."""
    points = []
    for record in records:
        points.extend((record.patient_id, t) for t in range(1, record.total_hours + 1))
    return points


def draw_samples(
    records: Sequence[PatientRecord],
    table: SampleWeightTable,
    count: int,
    rng: np.random.Generator,
) -> list[tuple[str, int]]:
    """``count`` i.i.d. draws of (patient_id, t) proportional to compute_weight."""
    if count < 1:
        raise ValueError("count must be >= 1")
    by_id = {r.patient_id: r for r in records}
    points = enumerate_timepoints(records)
    if not points:
        raise ValueError("empty cohort: no time points to sample")
    weights = np.array(
        [compute_weight(label_at(by_id[pid], t), table) for pid, t in points], dtype=float
    )
    idx = rng.choice(len(points), size=count, replace=True, p=weights / weights.sum())
    return [points[i] for i in idx]


def draw_uniform_points(
    records: Sequence[PatientRecord],
    count: int,
    rng: np.random.Generator,
) -> list[tuple[str, int]]:
    """Unweighted evaluation points, preserving the natural distribution."""
    points = enumerate_timepoints(records)
    if not points:
        raise ValueError("empty cohort: no time points to sample")
    idx = rng.choice(len(points), size=count, replace=True)
    return [points[i] for i in idx]


def split_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """(train, val, test) counts for fractional sizes.

    Rounding rule: train = floor(f_train * n); the remainder is divided
    between val and test proportionally with val taking the ceiling.
    """
    f_train, f_val, f_test = fractions
    if f_train + f_val + f_test > 1.0 + 1e-9:
        raise ValueError("fractions must sum to at most 1")
    train = math.floor(f_train * n)
    rest = n - train
    if f_val + f_test == 0:
        return train, 0, 0
    val = math.ceil(rest * f_val / (f_val + f_test))
    return train, val, rest - val


def fixed_eval_split(
    patient_ids: Sequence[str],
    sizes: tuple[int, int, int] | tuple[float, float, float],
    rng: np.random.Generator,
) -> tuple[frozenset[str], frozenset[str], frozenset[str]]:
    """Disjoint patient-level (train, val, test) id sets.

    ``sizes`` may be absolute counts or fractions (see split_sizes). The
    shuffle is seeded, so equal seeds give equal splits.
    """
    ids = sorted(set(patient_ids))
    if len(ids) != len(patient_ids):
        raise ValueError("patient ids must be unique")
    if all(isinstance(s, float) and s <= 1.0 for s in sizes):
        counts = split_sizes(len(ids), sizes)  # type: ignore[arg-type]
    else:
        counts = tuple(int(s) for s in sizes)  # type: ignore[assignment]
    n_train, n_val, n_test = counts
    if n_train + n_val + n_test > len(ids):
        raise ValueError(f"requested {n_train + n_val + n_test} patients, have {len(ids)}")
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    train = frozenset(shuffled[:n_train])
    val = frozenset(shuffled[n_train : n_train + n_val])
    test = frozenset(shuffled[n_train + n_val : n_train + n_val + n_test])
    return train, val, test


def export_weight_table(table: SampleWeightTable, path: str | Path) -> None:
    payload = {
        "transition_boost": table.transition_boost,
        "default_freq": table.default_freq,
        "event_freq": {"/".join(k): v for k, v in sorted(table.event_freq.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
