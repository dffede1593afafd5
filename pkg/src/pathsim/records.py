"""Hierarchical patient-record data model and hourly aggregation.

A record stores one stay as units -> categories -> features -> sparse hourly
series, plus static attributes, state-transition events, and terminal
diagnosis categories. All types are treated as immutable after construction;
the operations here are pure functions, so records can be shared freely
across threads and processes.
"""

from __future__ import annotations

import json
import statistics
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

SCHEMA_VERSION = 1

ED = "ED"
HOSPITAL = "Hospital"
ICU = "ICU"
UNITS = (ED, HOSPITAL, ICU)

EVENT = "event"
NUMERIC = "numeric"
CATEGORICAL = "categorical"
BINARY = "binary"
FEATURE_KINDS = (EVENT, NUMERIC, CATEGORICAL, BINARY)

ED_DISCHARGE = "ED_discharge"
HOSP_ADMIT = "Hosp_admit"
HOSP_DISCHARGE = "Hosp_discharge"
ICU_ADMIT = "ICU_admit"
ICU_DISCHARGE = "ICU_discharge"
DEATH = "Death"
STATE_KINDS = (ED_DISCHARGE, HOSP_ADMIT, HOSP_DISCHARGE, ICU_ADMIT, ICU_DISCHARGE, DEATH)

# (unit, category, feature) — the canonical key used by labels and metrics.
FeatureKey = tuple[str, str, str]


class RecordError(ValueError):
    """Raised when a record or operation input violates an invariant."""


def _is_float_like(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def validate_name(name: str, what: str = "name") -> None:
    """Names appear inside single quotes in the text format."""
    if not name or "'" in name or "\n" in name or name != name.strip():
        raise RecordError(f"invalid {what}: {name!r}")


def validate_value(kind: str, value) -> None:
    """Check a feature value against its series kind.

    Categorical strings must not look like numbers or yes/no flags: the text
    format infers the value kind from its surface form, so such strings would
    not survive a render/parse round trip.
    """
    if kind == EVENT:
        if value is not None:
            raise RecordError(f"event entries carry no value, got {value!r}")
    elif kind == NUMERIC:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise RecordError(f"numeric entry needs a number, got {value!r}")
        if value != value or value in (float("inf"), float("-inf")):
            raise RecordError("numeric entry must be finite")
    elif kind == CATEGORICAL:
        if not isinstance(value, str):
            raise RecordError(f"categorical entry needs a string, got {value!r}")
        validate_name(value, "categorical value")
        if _is_float_like(value) or value in ("yes", "no"):
            raise RecordError(f"categorical value {value!r} is ambiguous with a number or flag")
        if "," in value or ";" in value:
            raise RecordError(f"categorical value {value!r} may not contain ',' or ';'")
    elif kind == BINARY:
        if not isinstance(value, bool):
            raise RecordError(f"binary entry needs a bool, got {value!r}")
    else:
        raise RecordError(f"unknown feature kind {kind!r}")


@dataclass(frozen=True)
class FeatureSeries:
    """Sparse hourly series; missing hours simply have no entry."""

    kind: str
    entries: tuple[tuple[int, object], ...] = ()

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise RecordError(f"unknown feature kind {self.kind!r}")
        last = None
        for hour, value in self.entries:
            if not isinstance(hour, int) or hour < 0:
                raise RecordError(f"entry hour must be a non-negative int, got {hour!r}")
            if last is not None and hour <= last:
                raise RecordError("entries must be strictly ascending by hour")
            last = hour
            validate_value(self.kind, value)

    def at(self, hour: int):
        for h, v in self.entries:
            if h == hour:
                return v
        return None

    def has_entry(self, hour: int) -> bool:
        return any(h == hour for h, _ in self.entries)

    def window(self, lo: int, hi: int) -> tuple[tuple[int, object], ...]:
        return tuple((h, v) for h, v in self.entries if lo <= h <= hi)


@dataclass(frozen=True)
class CategoryData:
    features: Mapping[str, FeatureSeries] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.features:
            validate_name(name, "feature name")


@dataclass(frozen=True)
class UnitData:
    categories: Mapping[str, CategoryData] = field(default_factory=dict)
    # Stored remaining-stay value; populated only by reintegrated predictions.
    # Ground-truth remaining stay is derived from state events instead.
    los_remaining: int | None = None

    def __post_init__(self):
        for name in self.categories:
            validate_name(name, "category name")
        if self.los_remaining is not None and self.los_remaining < 0:
            raise RecordError("los_remaining must be non-negative")


@dataclass(frozen=True)
class StateEvent:
    hour: int
    kind: str

    def __post_init__(self):
        if self.kind not in STATE_KINDS:
            raise RecordError(f"unknown state kind {self.kind!r}")
        if self.hour < 0:
            raise RecordError("state event hour must be non-negative")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    static_info: Mapping[str, str] = field(default_factory=dict)
    units: Mapping[str, UnitData] = field(default_factory=dict)
    total_hours: int = 0
    state_events: tuple[StateEvent, ...] = ()
    icd_categories: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.total_hours < 0:
            raise RecordError("total_hours must be non-negative")
        for unit in self.units:
            if unit not in UNITS:
                raise RecordError(f"unknown unit {unit!r}")
        for key, val in self.static_info.items():
            validate_name(key, "static key")
            validate_name(val, "static value")
        deaths = [e for e in self.state_events if e.kind == DEATH]
        if len(deaths) > 1:
            raise RecordError("at most one Death per record")
        if deaths and any(e.hour > deaths[0].hour for e in self.state_events):
            raise RecordError("Death must be the final state event")
        for e in self.state_events:
            if e.hour > self.total_hours:
                raise RecordError(f"state event at hour {e.hour} beyond total_hours {self.total_hours}")
        for unit, udata in self.units.items():
            for cat, cdata in udata.categories.items():
                for feat, series in cdata.features.items():
                    for h, _ in series.entries:
                        if h > self.total_hours:
                            raise RecordError(
                                f"{unit}/{cat}/{feat} has entry at hour {h} beyond total_hours"
                            )
        if self.icd_categories:
            for c in self.icd_categories:
                validate_name(c, "ICD category")
                if ";" in c:
                    raise RecordError("ICD category may not contain ';'")
            if terminal_kind_of(self) is None:
                raise RecordError("icd_categories present on a record without a terminal state")

    def feature_series(self, key: FeatureKey) -> FeatureSeries | None:
        unit, cat, feat = key
        udata = self.units.get(unit)
        if udata is None:
            return None
        cdata = udata.categories.get(cat)
        if cdata is None:
            return None
        return cdata.features.get(feat)

    def iter_features(self) -> Iterator[tuple[FeatureKey, FeatureSeries]]:
        for unit, udata in self.units.items():
            for cat, cdata in udata.categories.items():
                for feat, series in cdata.features.items():
                    yield (unit, cat, feat), series

    def state_kinds_at(self, hour: int) -> frozenset[str]:
        return frozenset(e.kind for e in self.state_events if e.hour == hour)


@dataclass(frozen=True)
class RawObservation:
    """Pre-aggregation input row with a sub-hour timestamp in decimal hours."""

    unit: str
    category: str
    feature: str
    kind: str
    timestamp: float
    value: object = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise RecordError("observation timestamp must be >= 0")
        if self.unit not in UNITS:
            raise RecordError(f"unknown unit {self.unit!r}")
        if self.kind not in FEATURE_KINDS:
            raise RecordError(f"unknown feature kind {self.kind!r}")
        validate_value(self.kind, self.value)


@dataclass(frozen=True)
class TimestepOutput:
    """Sparse content of a single hour: a training label and a prediction.

    ``los`` maps active units to remaining hours counted after this one (so 0
    means the unit's exit fires at the next hour). ``events`` and ``values``
    are keyed by (unit, category, feature); the two key sets are disjoint.
    ``icd`` may only accompany a terminal state.
    """

    los: Mapping[str, int] = field(default_factory=dict)
    state: frozenset[str] = frozenset()
    events: frozenset[FeatureKey] = frozenset()
    values: Mapping[FeatureKey, object] = field(default_factory=dict)
    icd: frozenset[str] | None = None

    def __post_init__(self):
        for unit, hours in self.los.items():
            if unit not in UNITS:
                raise RecordError(f"unknown unit {unit!r} in los")
            if not isinstance(hours, int) or hours < 0:
                raise RecordError(f"los must be a non-negative int, got {hours!r}")
        for kind in self.state:
            if kind not in STATE_KINDS:
                raise RecordError(f"unknown state kind {kind!r}")
        for key in self.events:
            self._check_key(key)
        overlap = self.events & set(self.values)
        if overlap:
            raise RecordError(f"keys present as both event and value: {sorted(overlap)}")
        for key, value in self.values.items():
            self._check_key(key)
            if isinstance(value, bool):
                validate_value(BINARY, value)
            elif isinstance(value, (int, float)):
                validate_value(NUMERIC, value)
            elif isinstance(value, str):
                validate_value(CATEGORICAL, value)
            else:
                raise RecordError(f"unsupported value {value!r}")
        if self.icd is not None:
            if not self.icd:
                raise RecordError("icd, when present, must be non-empty")
            for c in self.icd:
                validate_name(c, "ICD category")
                if ";" in c:
                    raise RecordError("ICD category may not contain ';'")
            if terminal_kind(self.state) is None:
                raise RecordError("icd present without a terminal state")

    @staticmethod
    def _check_key(key: FeatureKey) -> None:
        unit, cat, feat = key
        if unit not in UNITS:
            raise RecordError(f"unknown unit {unit!r} in feature key")
        validate_name(cat, "category name")
        validate_name(feat, "feature name")

    def is_empty(self) -> bool:
        return not (self.los or self.state or self.events or self.values or self.icd)

    def feature_keys(self) -> frozenset[FeatureKey]:
        return self.events | frozenset(self.values)


def terminal_kind(state: Iterable[str]) -> str | None:
    """The stay-ending transition in a set of state kinds, if any.

    Death and hospital discharge always end the stay; an ED discharge ends it
    only when no hospital admission happens in the same hour (otherwise it is
    a transfer).
    """
    kinds = set(state)
    if DEATH in kinds:
        return DEATH
    if HOSP_DISCHARGE in kinds:
        return HOSP_DISCHARGE
    if ED_DISCHARGE in kinds and HOSP_ADMIT not in kinds:
        return ED_DISCHARGE
    return None


def terminal_kind_of(record: PatientRecord) -> str | None:
    if not record.state_events:
        return None
    final_hour = max(e.hour for e in record.state_events)
    return terminal_kind(record.state_kinds_at(final_hour))


# --- unit intervals, locations, remaining stay --------------------------------

_UNIT_ENTER = {HOSPITAL: HOSP_ADMIT, ICU: ICU_ADMIT}
_UNIT_EXIT = {ED: ED_DISCHARGE, HOSPITAL: HOSP_DISCHARGE, ICU: ICU_DISCHARGE}


def unit_intervals(record: PatientRecord) -> dict[str, list[tuple[int, int | None]]]:
    """Closed stay intervals per unit derived from state events.

    The ED interval starts at hour 0. An interval still open at the end of
    the record (no exit event yet) has exit ``None``. Death closes every open
    interval at the death hour.
    """
    events = sorted(record.state_events, key=lambda e: (e.hour, STATE_KINDS.index(e.kind)))
    death_hour = next((e.hour for e in events if e.kind == DEATH), None)
    out: dict[str, list[tuple[int, int | None]]] = {u: [] for u in UNITS}
    open_at: dict[str, int | None] = {u: None for u in UNITS}
    open_at[ED] = 0
    for e in events:
        for unit, enter_kind in _UNIT_ENTER.items():
            if e.kind == enter_kind and open_at[unit] is None:
                open_at[unit] = e.hour
        for unit, exit_kind in _UNIT_EXIT.items():
            if e.kind == exit_kind and open_at[unit] is not None:
                out[unit].append((open_at[unit], e.hour))
                open_at[unit] = None
    for unit in UNITS:
        if open_at[unit] is not None:
            out[unit].append((open_at[unit], death_hour))
    return out


def active_units(record: PatientRecord, t: int) -> list[str]:
    """Units the patient occupies at hour t (exit hour itself is not active)."""
    active = []
    for unit, spans in unit_intervals(record).items():
        for enter, exit_hour in spans:
            if enter <= t and (exit_hour is None or t < exit_hour):
                active.append(unit)
    return [u for u in UNITS if u in active]


def location_at(record: PatientRecord, t: int) -> str:
    """Innermost occupied unit at hour t (ICU > Hospital > ED)."""
    active = active_units(record, t)
    for unit in (ICU, HOSPITAL, ED):
        if unit in active:
            return unit
    # At or past the final hour: report the last known location.
    for unit in (ICU, HOSPITAL, ED):
        for enter, exit_hour in unit_intervals(record).get(unit, []):
            if enter <= t and exit_hour is not None and t >= exit_hour:
                return unit
    return ED


def true_los_remaining(record: PatientRecord, unit: str, t: int) -> int | None:
    """Ground-truth remaining hours in ``unit`` after hour t.

    Returns 0 when the unit's exit fires at t+1, and None when the unit is
    not active at t or its exit is not recorded (truncated record).
    """
    for enter, exit_hour in unit_intervals(record).get(unit, []):
        if enter <= t and (exit_hour is None or t < exit_hour):
            if exit_hour is None:
                return None
            return exit_hour - t - 1
    return None


# --- operations ---------------------------------------------------------------

def _mode(values: Sequence[object]) -> object:
    """Most frequent value; ties broken by lexicographic order of str form."""
    counts: dict[object, int] = defaultdict(int)
    for v in values:
        counts[v] += 1
    best = max(counts.values())
    return min((v for v, c in counts.items() if c == best), key=str)


def aggregate_hourly(
    observations: Iterable[RawObservation],
    *,
    patient_id: str,
    static_info: Mapping[str, str] | None = None,
    state_events: Sequence[StateEvent] = (),
    icd_categories: Iterable[str] = (),
    total_hours: int | None = None,
) -> PatientRecord:
    """Bucket raw observations into hourly entries.

    Sub-hour timestamps floor to their hour. Per (feature, hour): numeric
    readings average (round-half-even to 2 digits), categorical and binary
    readings take the most frequent value, events collapse to presence.
    """
    by_feature: dict[FeatureKey, list[RawObservation]] = defaultdict(list)
    kinds: dict[FeatureKey, str] = {}
    for obs in observations:
        key = (obs.unit, obs.category, obs.feature)
        validate_name(obs.category, "category name")
        validate_name(obs.feature, "feature name")
        if key in kinds and kinds[key] != obs.kind:
            raise RecordError(
                f"feature {obs.feature!r} observed with kinds {kinds[key]!r} and {obs.kind!r}"
            )
        kinds[key] = obs.kind
        by_feature[key].append(obs)

    units: dict[str, dict[str, dict[str, FeatureSeries]]] = defaultdict(lambda: defaultdict(dict))
    max_hour = 0
    for key in sorted(by_feature, key=lambda k: (UNITS.index(k[0]), k[1], k[2])):
        unit, cat, feat = key
        kind = kinds[key]
        by_hour: dict[int, list[object]] = defaultdict(list)
        for obs in by_feature[key]:
            by_hour[int(obs.timestamp)].append(obs.value)
        entries = []
        for hour in sorted(by_hour):
            vals = by_hour[hour]
            if kind == EVENT:
                entries.append((hour, None))
            elif kind == NUMERIC:
                entries.append((hour, round(statistics.fmean(vals), 2)))
            else:
                entries.append((hour, _mode(vals)))
            max_hour = max(max_hour, hour)
        units[unit][cat][feat] = FeatureSeries(kind=kind, entries=tuple(entries))

    for e in state_events:
        max_hour = max(max_hour, e.hour)
    if total_hours is None:
        total_hours = max_hour
    return PatientRecord(
        patient_id=patient_id,
        static_info=dict(static_info or {}),
        units={
            u: UnitData(categories={c: CategoryData(features=dict(feats)) for c, feats in cats.items()})
            for u, cats in units.items()
        },
        total_hours=total_hours,
        state_events=tuple(sorted(state_events, key=lambda e: (e.hour, STATE_KINDS.index(e.kind)))),
        icd_categories=frozenset(icd_categories),
    )


def snapshot(record: PatientRecord, t: int) -> PatientRecord:
    """The record as known at hour t: entries and state events at hours <= t.

    Canonical: features and categories left empty by the truncation are
    pruned, and stored LOS predictions (made relative to a later frontier)
    are dropped. Diagnosis categories are retained only at the final hour.
    """
    if not 0 <= t <= record.total_hours:
        raise RecordError(f"snapshot hour {t} outside [0, {record.total_hours}]")
    if t == record.total_hours:
        return record
    units = {}
    for unit, udata in record.units.items():
        cats = {}
        for cat, cdata in udata.categories.items():
            feats = {}
            for feat, series in cdata.features.items():
                kept = tuple((h, v) for h, v in series.entries if h <= t)
                if kept:
                    feats[feat] = replace(series, entries=kept)
            if feats:
                cats[cat] = CategoryData(features=feats)
        if cats:
            units[unit] = UnitData(categories=cats, los_remaining=None)
    return PatientRecord(
        patient_id=record.patient_id,
        static_info=dict(record.static_info),
        units=units,
        total_hours=t,
        state_events=tuple(e for e in record.state_events if e.hour <= t),
        icd_categories=frozenset(),
    )


def label_at(record: PatientRecord, t: int) -> TimestepOutput:
    """The sparse supervision target for hour t.

    Contains exactly the features recorded at t, the state transitions at t,
    remaining-stay counts for units still occupied past t, and diagnosis
    categories at the final hour.
    """
    if not 1 <= t <= record.total_hours:
        raise RecordError(f"label hour {t} outside [1, {record.total_hours}]")
    events = set()
    values = {}
    for key, series in record.iter_features():
        if not series.has_entry(t):
            continue
        if series.kind == EVENT:
            events.add(key)
        else:
            values[key] = series.at(t)
    state = record.state_kinds_at(t)
    los = {}
    for unit in active_units(record, t):
        remaining = true_los_remaining(record, unit, t)
        if remaining is not None:
            los[unit] = remaining
    icd = None
    if t == record.total_hours and record.icd_categories:
        icd = frozenset(record.icd_categories)
    return TimestepOutput(
        los=los, state=state, events=frozenset(events), values=values, icd=icd
    )


def build_feature_catalog(records: Iterable[PatientRecord]) -> dict[FeatureKey, str]:
    """Map every feature key seen in ``records`` to its kind."""
    catalog: dict[FeatureKey, str] = {}
    for record in records:
        for key, series in record.iter_features():
            prev = catalog.get(key)
            if prev is not None and prev != series.kind:
                raise RecordError(f"feature {key} seen with kinds {prev!r} and {series.kind!r}")
            catalog[key] = series.kind
    return catalog


# --- persistence ---------------------------------------------------------------

def record_to_json(record: PatientRecord) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "patient_id": record.patient_id,
        "static_info": dict(record.static_info),
        "total_hours": record.total_hours,
        "units": {
            unit: {
                "los_remaining": udata.los_remaining,
                "categories": {
                    cat: {
                        feat: {"kind": series.kind, "entries": [[h, v] for h, v in series.entries]}
                        for feat, series in cdata.features.items()
                    }
                    for cat, cdata in udata.categories.items()
                },
            }
            for unit, udata in record.units.items()
        },
        "state_events": [[e.hour, e.kind] for e in record.state_events],
        "icd_categories": sorted(record.icd_categories),
    }


def record_from_json(doc: Mapping) -> PatientRecord:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise RecordError(f"unsupported schema_version {version!r}")
    units = {}
    for unit, upayload in doc.get("units", {}).items():
        cats = {}
        for cat, feats in upayload.get("categories", {}).items():
            series = {}
            for feat, payload in feats.items():
                entries = tuple((int(h), v) for h, v in payload["entries"])
                series[feat] = FeatureSeries(kind=payload["kind"], entries=entries)
            cats[cat] = CategoryData(features=series)
        units[unit] = UnitData(categories=cats, los_remaining=upayload.get("los_remaining"))
    return PatientRecord(
        patient_id=doc["patient_id"],
        static_info=dict(doc.get("static_info", {})),
        units=units,
        total_hours=int(doc["total_hours"]),
        state_events=tuple(StateEvent(hour=int(h), kind=k) for h, k in doc.get("state_events", [])),
        icd_categories=frozenset(doc.get("icd_categories", [])),
    )


def write_records(path: str | Path, records: Iterable[PatientRecord]) -> int:
    """Write one JSON object per line; returns the number of records written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), sort_keys=True) + "\n")
            count += 1
    return count


def read_records(path: str | Path) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, RecordError) as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from exc
    return records
