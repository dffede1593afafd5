"""Structured-text codec for record snapshots and next-hour outputs.

The input side renders a record snapshot as an indented key/quoted-value
document (header, then one block per unit, categories nested inside) with
timestamps expressed as hours-before-now and identical consecutive values
merged into spans. The output side renders a ``TimestepOutput`` canonically
and parses generated text back, salvaging what it can. The exact grammar is
documented in FORMATS.md; all functions here are pure except where a caller
supplies an rng.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .records import (
    BINARY,
    CATEGORICAL,
    DEATH,
    ED,
    ED_DISCHARGE,
    EVENT,
    FeatureKey,
    FeatureSeries,
    HOSP_ADMIT,
    HOSP_DISCHARGE,
    HOSPITAL,
    ICU,
    ICU_ADMIT,
    ICU_DISCHARGE,
    NUMERIC,
    PatientRecord,
    RecordError,
    STATE_KINDS,
    StateEvent,
    CategoryData,
    TimestepOutput,
    UNITS,
    UnitData,
    active_units,
    location_at,
    terminal_kind,
    terminal_kind_of,
    true_los_remaining,
    validate_value,
)

EMPTY_OUTPUT_TEXT = "(no change)"

LOS_MODE_STORED = "stored"
LOS_MODE_EXACT = "exact"
LOS_MODE_NOISY = "noisy"
LOS_MODE_DROPPED = "dropped"
LOS_MODES = (LOS_MODE_STORED, LOS_MODE_EXACT, LOS_MODE_NOISY, LOS_MODE_DROPPED)

# Key names with fixed meaning inside a unit block; not usable as categories.
RESERVED_KEYS = ("LOS", "Disposition", "ICD categories", "Patient", "Location")

_DISPOSITION_TO_KIND = {
    (ED, "DISCHARGED"): ED_DISCHARGE,
    (HOSPITAL, "ADMITTED"): HOSP_ADMIT,
    (HOSPITAL, "DISCHARGED"): HOSP_DISCHARGE,
    (ICU, "ADMITTED"): ICU_ADMIT,
    (ICU, "DISCHARGED"): ICU_DISCHARGE,
}
_KIND_TO_DISPOSITION = {v: k for k, v in _DISPOSITION_TO_KIND.items()}


class MalformedOutput(ValueError):
    """Raised when no part of a generated output could be recovered."""


class ApplyError(ValueError):
    """Raised when an output cannot be reintegrated into a record."""


# --- value formatting -----------------------------------------------------------

def format_input_number(x: float) -> str:
    """Minimal rendering used on the input side: integral floats drop '.0'."""
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return repr(x)


def format_output_value(v) -> str:
    """Canonical output-side rendering; numbers keep a decimal point."""
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (int, float)):
        return repr(float(v))
    return str(v)


def _input_value_str(v) -> str | None:
    if v is None:
        return None
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (int, float)):
        return format_input_number(v)
    return str(v)


# --- span merging ----------------------------------------------------------------

def merge_spans(pairs: Sequence[tuple[int, str | None]]) -> list[str]:
    """Merge (hours-before-now, rendered value) pairs into span strings.

    ``pairs`` must be sorted by descending hours-before-now (chronological).
    Adjacent hours with an equal value form a dash span "a-b: v"; three or
    more non-adjacent single hours sharing a value form a slash span
    "a/b/c: v"; everything else renders as a single "h:v". Event pairs (value
    None) render the time part alone.
    """
    runs: list[tuple[list[int], str | None]] = []
    for rel, v in pairs:
        if runs and runs[-1][1] == v and runs[-1][0][-1] == rel + 1:
            runs[-1][0].append(rel)
        else:
            runs.append(([rel], v))
    out: list[str] = []
    i = 0
    while i < len(runs):
        hours, v = runs[i]
        if len(hours) == 1:
            j = i
            while j + 1 < len(runs) and len(runs[j + 1][0]) == 1 and runs[j + 1][1] == v:
                j += 1
            if j - i + 1 >= 3:
                head = "/".join(str(runs[k][0][0]) for k in range(i, j + 1))
                out.append(head if v is None else f"{head}: {v}")
                i = j + 1
                continue
            out.append(str(hours[0]) if v is None else f"{hours[0]}:{v}")
        else:
            head = f"{hours[0]}-{hours[-1]}"
            out.append(head if v is None else f"{head}: {v}")
        i += 1
    return out


_SPAN_DASH = re.compile(r"^(\d+)-(\d+)(?:: (.*))?$")
_SPAN_SLASH = re.compile(r"^(\d+(?:/\d+)+)(?:: (.*))?$")
_SPAN_SINGLE = re.compile(r"^(\d+)(?::(.*))?$")


def parse_spans(text: str) -> list[tuple[int, str | None]]:
    """Inverse of merge_spans: expand span strings back into (rel, value) pairs."""
    pairs: list[tuple[int, str | None]] = []
    for span in text.split(", "):
        m = _SPAN_DASH.match(span)
        if m:
            a, b, v = int(m.group(1)), int(m.group(2)), m.group(3)
            if a < b:
                raise ValueError(f"dash span {span!r} must run from older to newer")
            pairs.extend((rel, v) for rel in range(a, b - 1, -1))
            continue
        m = _SPAN_SLASH.match(span)
        if m:
            pairs.extend((int(h), m.group(2)) for h in m.group(1).split("/"))
            continue
        m = _SPAN_SINGLE.match(span)
        if m:
            pairs.append((int(m.group(1)), m.group(2)))
            continue
        raise ValueError(f"unparseable span {span!r}")
    return pairs


def render_series(name: str, series: FeatureSeries, t: int, window: int | None = None) -> str:
    """One feature rendered inline, e.g. "Heart Rate: 5:82, 1:80"."""
    lo = 0 if window is None else max(0, t - window)
    # Entries ascend by absolute hour, so hours-before-now already descend.
    pairs = [(t - h, _input_value_str(v)) for h, v in series.window(lo, t)]
    return f"{name}: {', '.join(merge_spans(pairs))}"


# --- LOS token -------------------------------------------------------------------

def los_token_hours(
    hours: int,
    mode: str,
    rng: np.random.Generator | None = None,
    noise_pct: float = 0.20,
) -> int | None:
    if hours < 0:
        raise ValueError("LOS hours must be non-negative")
    if mode == LOS_MODE_DROPPED:
        return None
    if mode in (LOS_MODE_EXACT, LOS_MODE_STORED):
        return hours
    if mode == LOS_MODE_NOISY:
        if rng is None:
            raise ValueError("noisy LOS mode needs an rng")
        lo = math.ceil((1.0 - noise_pct) * hours)
        hi = math.floor((1.0 + noise_pct) * hours)
        return int(rng.integers(lo, hi + 1))
    raise ValueError(f"unknown LOS mode {mode!r}")


def render_los_token(
    hours: int,
    mode: str,
    rng: np.random.Generator | None = None,
    noise_pct: float = 0.20,
) -> str | None:
    """The remaining-stay token, or None when dropped."""
    value = los_token_hours(hours, mode, rng, noise_pct)
    if value is None:
        return None
    return f"LOS: {value} hours"


# --- input rendering -------------------------------------------------------------

@dataclass(frozen=True)
class RenderConfig:
    """Controls the input rendering window and the LOS token treatment.

    ``los_mode`` "stored" reads the record's reintegrated predictions (used
    during simulation; absent values simply omit the token), while
    "exact"/"noisy"/"dropped" derive the ground-truth countdown from state
    events (used when building training inputs).
    """

    window_hours: int | None = 24
    include_los: bool = True
    los_mode: str = LOS_MODE_STORED
    los_noise_pct: float = 0.20
    los_override: int | None = None

    def __post_init__(self):
        if self.window_hours is not None and self.window_hours < 0:
            raise ValueError("window_hours must be non-negative or None for full history")
        if not 0.0 <= self.los_noise_pct < 1.0:
            raise ValueError("los_noise_pct must lie in [0, 1)")
        if self.los_mode not in LOS_MODES:
            raise ValueError(f"unknown los_mode {self.los_mode!r}")


FULL_HISTORY = RenderConfig(window_hours=None, include_los=False)


@dataclass(frozen=True)
class InputSection:
    unit: str
    category: str
    lines: tuple[str, ...]

    @property
    def text(self) -> str:
        return "\n".join([f"'{self.unit}':", f"  '{self.category}':", *self.lines])


@dataclass(frozen=True)
class RenderedInput:
    header: str
    los_lines: tuple[tuple[str, str], ...]
    sections: tuple[InputSection, ...]

    @property
    def text(self) -> str:
        lines = [self.header] if self.header else []
        los = dict(self.los_lines)
        for unit in UNITS:
            unit_sections = [s for s in self.sections if s.unit == unit]
            if unit not in los and not unit_sections:
                continue
            lines.append(f"'{unit}':")
            if unit in los:
                lines.append(los[unit])
            for section in unit_sections:
                lines.append(f"  '{section.category}':")
                lines.extend(section.lines)
        return "\n".join(lines)


def _resolved_los(
    record: PatientRecord,
    unit: str,
    t: int,
    cfg: RenderConfig,
    rng: np.random.Generator | None,
) -> int | None:
    if not cfg.include_los:
        return None
    if cfg.los_override is not None:
        if unit in active_units(record, t):
            return cfg.los_override
        return None
    if cfg.los_mode == LOS_MODE_STORED:
        udata = record.units.get(unit)
        return udata.los_remaining if udata is not None else None
    hours = true_los_remaining(record, unit, t)
    if hours is None:
        return None
    return los_token_hours(hours, cfg.los_mode, rng, cfg.los_noise_pct)


def render_input(
    record: PatientRecord,
    t: int,
    cfg: RenderConfig,
    rng: np.random.Generator | None = None,
) -> RenderedInput:
    """Render the snapshot at hour t as structured input text.

    Only entries within the window [t - w, t] appear; features with no entry
    in the window are omitted entirely. Timestamps render as hours before t.
    """
    if t > record.total_hours:
        raise RecordError(f"render hour {t} beyond total_hours {record.total_hours}")
    lo = 0 if cfg.window_hours is None else max(0, t - cfg.window_hours)

    header_lines = ["'Patient':"]
    for key, val in record.static_info.items():
        header_lines.append(f"  '{key}': '{val}'")
    loc_pairs = [(t - h, location_at(record, h)) for h in range(lo, t + 1)]
    header_lines.append(f"  'Location': '{', '.join(merge_spans(loc_pairs))}'")

    los_lines = []
    sections = []
    for unit in UNITS:
        udata = record.units.get(unit)
        hours = _resolved_los(record, unit, t, cfg, rng)
        if hours is not None:
            los_lines.append((unit, f"  'LOS': '{hours} hours'"))
        if udata is None:
            continue
        for cat, cdata in udata.categories.items():
            lines = []
            for feat, series in cdata.features.items():
                windowed = series.window(lo, t)
                if not windowed:
                    continue
                pairs = [(t - h, _input_value_str(v)) for h, v in windowed]
                lines.append(f"    '{feat}': '{', '.join(merge_spans(pairs))}'")
            if lines:
                sections.append(InputSection(unit=unit, category=cat, lines=tuple(lines)))

    return RenderedInput(
        header="\n".join(header_lines),
        los_lines=tuple(los_lines),
        sections=tuple(sections),
    )


# --- output rendering --------------------------------------------------------------

def render_output(out: TimestepOutput) -> str:
    """Canonical text for a TimestepOutput; byte-deterministic for equal inputs."""
    if out.is_empty():
        return EMPTY_OUTPUT_TEXT
    by_category: dict[tuple[str, str], tuple[list[str], list[tuple[str, str]]]] = {}
    for unit, cat, feat in sorted(out.events):
        by_category.setdefault((unit, cat), ([], []))[0].append(feat)
    for key in sorted(out.values):
        unit, cat, feat = key
        by_category.setdefault((unit, cat), ([], []))[1].append(
            (feat, format_output_value(out.values[key]))
        )

    lines: list[str] = []
    for unit in UNITS:
        unit_lines: list[str] = []
        if unit in out.los:
            unit_lines.append(f"  'LOS': '{out.los[unit]} hours'")
        for kind in sorted(out.state, key=STATE_KINDS.index):
            disp = _KIND_TO_DISPOSITION.get(kind)
            if disp is not None and disp[0] == unit:
                unit_lines.append(f"  'Disposition': '{disp[1]}'")
        for (u, cat) in sorted(by_category):
            if u != unit:
                continue
            events, values = by_category[(u, cat)]
            unit_lines.append(f"  '{cat}':")
            unit_lines.extend(f"  - '{feat}'" for feat in events)
            unit_lines.extend(f"    '{feat}': '{v}'" for feat, v in values)
        if unit_lines:
            lines.append(f"'{unit}':")
            lines.extend(unit_lines)
    if DEATH in out.state:
        lines.append("'Disposition': 'DECEASED'")
    if out.icd:
        lines.append(f"'ICD categories': '{';'.join(sorted(out.icd))}'")
    return "\n".join(lines)


# --- output parsing -----------------------------------------------------------------

@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.message}"


@dataclass(frozen=True)
class ParseResult:
    """Parsed output plus diagnostics; non-empty diagnostics mean a partial parse."""

    output: TimestepOutput
    diagnostics: tuple[ParseDiagnostic, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.diagnostics


_RE_UNIT = re.compile(r"^'(ED|Hospital|ICU)':$")
_RE_TOP_DISPOSITION = re.compile(r"^'Disposition': '([A-Z]+)'$")
_RE_ICD = re.compile(r"^'ICD categories': '([^']*)'$")
_RE_LOS = re.compile(r"^  'LOS': '(-?\d+) hours'$")
_RE_UNIT_DISPOSITION = re.compile(r"^  'Disposition': '([A-Z]+)'$")
_RE_CATEGORY = re.compile(r"^  '([^':][^']*)':$")
_RE_EVENT_ITEM = re.compile(r"^  - '([^']+)'$")
_RE_VALUE = re.compile(r"^    '([^']+)': '([^']*)'$")


def _detect_value(raw: str):
    """Infer the value kind from its surface form."""
    if raw in ("yes", "no"):
        return raw == "yes"
    try:
        num = float(raw)
    except ValueError:
        return raw
    if math.isfinite(num):
        return num
    return raw


def parse_output(
    text: str,
    catalog: Mapping[FeatureKey, str] | None = None,
) -> ParseResult:
    """Parse generated output text back into a TimestepOutput.

    Inverse of render_output on its image. Lines that do not fit the grammar
    (or, with a catalog, contradict a known feature's kind) are dropped with a
    diagnostic; unknown features are retained with their surface kind. Raises
    MalformedOutput when nothing at all can be recovered.
    """
    stripped = text.strip()
    if stripped == EMPTY_OUTPUT_TEXT:
        return ParseResult(output=TimestepOutput())

    diagnostics: list[ParseDiagnostic] = []
    los: dict[str, int] = {}
    state: set[str] = set()
    events: set[FeatureKey] = set()
    values: dict[FeatureKey, object] = {}
    icd: frozenset[str] | None = None
    consumed = 0
    unit: str | None = None
    category: str | None = None

    def diag(lineno: int, raw: str, message: str) -> None:
        col = len(raw) - len(raw.lstrip()) + 1
        diagnostics.append(ParseDiagnostic(line=lineno, column=col, message=message))

    def add_feature(lineno: int, raw: str, key: FeatureKey, value, is_event: bool) -> None:
        nonlocal consumed
        if key in events or key in values:
            diag(lineno, raw, f"duplicate feature {key[2]!r}")
            return
        if catalog is not None and key in catalog:
            kind = catalog[key]
            if is_event != (kind == EVENT):
                diag(lineno, raw, f"feature {key[2]!r} is {kind}, wrong line form")
                return
            if not is_event:
                ok = (
                    (kind == NUMERIC and isinstance(value, float))
                    or (kind == BINARY and isinstance(value, bool))
                    or (kind == CATEGORICAL and isinstance(value, str))
                )
                if not ok:
                    diag(lineno, raw, f"value {value!r} does not parse as {kind} for {key[2]!r}")
                    return
        if is_event:
            events.add(key)
        else:
            try:
                if isinstance(value, bool):
                    validate_value(BINARY, value)
                elif isinstance(value, float):
                    validate_value(NUMERIC, value)
                else:
                    validate_value(CATEGORICAL, value)
            except RecordError as exc:
                diag(lineno, raw, str(exc))
                return
            values[key] = value
        consumed += 1

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue

        m = _RE_UNIT.match(line)
        if m:
            unit, category = m.group(1), None
            consumed += 1
            continue
        m = _RE_TOP_DISPOSITION.match(line)
        if m:
            if m.group(1) == "DECEASED":
                state.add(DEATH)
                consumed += 1
            else:
                diag(lineno, raw, f"unknown top-level disposition {m.group(1)!r}")
            unit, category = None, None
            continue
        m = _RE_ICD.match(line)
        if m:
            parts = [p for p in m.group(1).split(";") if p]
            if not parts:
                diag(lineno, raw, "empty ICD list")
            elif icd is not None:
                diag(lineno, raw, "duplicate ICD line")
            else:
                icd = frozenset(parts)
                consumed += 1
            unit, category = None, None
            continue
        m = _RE_LOS.match(line)
        if m:
            if unit is None:
                diag(lineno, raw, "LOS line outside a unit block")
            elif unit in los:
                diag(lineno, raw, f"duplicate LOS for {unit}")
            else:
                hours = int(m.group(1))
                if hours < 0:
                    diag(lineno, raw, "negative LOS")
                else:
                    los[unit] = hours
                    consumed += 1
            continue
        m = _RE_UNIT_DISPOSITION.match(line)
        if m:
            if unit is None:
                diag(lineno, raw, "Disposition line outside a unit block")
            else:
                kind = _DISPOSITION_TO_KIND.get((unit, m.group(1)))
                if kind is None:
                    diag(lineno, raw, f"invalid disposition {m.group(1)!r} for {unit}")
                else:
                    state.add(kind)
                    consumed += 1
            continue
        m = _RE_EVENT_ITEM.match(line)
        if m:
            if unit is None or category is None:
                diag(lineno, raw, "event item outside a category block")
            else:
                add_feature(lineno, raw, (unit, category, m.group(1)), None, is_event=True)
            continue
        m = _RE_VALUE.match(line)
        if m:
            if unit is None or category is None:
                diag(lineno, raw, "value line outside a category block")
            else:
                key = (unit, category, m.group(1))
                add_feature(lineno, raw, key, _detect_value(m.group(2)), is_event=False)
            continue
        m = _RE_CATEGORY.match(line)
        if m:
            name = m.group(1)
            if unit is None:
                diag(lineno, raw, "category header outside a unit block")
            elif name in RESERVED_KEYS:
                diag(lineno, raw, f"reserved key {name!r} used as category")
            else:
                category = name
                consumed += 1
            continue
        diag(lineno, raw, "unrecognized line")

    if consumed == 0:
        raise MalformedOutput(
            "no recognizable structure" + (f": {diagnostics[0]}" if diagnostics else "")
        )
    if icd is not None and terminal_kind(state) is None:
        diagnostics.append(
            ParseDiagnostic(line=0, column=0, message="ICD categories without terminal state dropped")
        )
        icd = None
    output = TimestepOutput(
        los=los, state=frozenset(state), events=frozenset(events), values=values, icd=icd
    )
    return ParseResult(output=output, diagnostics=tuple(diagnostics))


# --- reintegration -------------------------------------------------------------------

def _infer_kind(value) -> str:
    if value is None:
        return EVENT
    if isinstance(value, bool):
        return BINARY
    if isinstance(value, (int, float)):
        return NUMERIC
    return CATEGORICAL


def apply_output(
    record: PatientRecord,
    t: int,
    out: TimestepOutput,
    horizon: int | None = None,
) -> PatientRecord:
    """Write ``out`` into the record at hour t+1 and advance the clock.

    The record must end at hour t (history is never rewritten). Stored LOS
    values are replaced wholesale by the output's. Conflicting terminal
    states are rejected.
    """
    if t != record.total_hours:
        raise ApplyError(f"can only apply at the record frontier ({record.total_hours}), got {t}")
    if horizon is not None and t + 1 > horizon:
        raise ApplyError(f"hour {t + 1} beyond horizon {horizon}")
    if terminal_kind_of(record) is not None:
        raise ApplyError("record already ended")
    if DEATH in out.state and len(out.state) > 1:
        raise ApplyError(f"conflicting terminal states: {sorted(out.state)}")

    new_hour = t + 1
    units: dict[str, dict[str, dict[str, FeatureSeries]]] = {
        unit: {
            cat: dict(cdata.features)
            for cat, cdata in udata.categories.items()
        }
        for unit, udata in record.units.items()
    }

    def series_for(key: FeatureKey, kind: str) -> FeatureSeries:
        unit, cat, feat = key
        existing = units.setdefault(unit, {}).setdefault(cat, {}).get(feat)
        if existing is None:
            return FeatureSeries(kind=kind, entries=())
        if existing.kind != kind:
            raise ApplyError(f"feature {key} is {existing.kind}, output carries {kind}")
        return existing

    for key in out.events:
        series = series_for(key, EVENT)
        units[key[0]][key[1]][key[2]] = FeatureSeries(
            kind=EVENT, entries=series.entries + ((new_hour, None),)
        )
    for key, value in out.values.items():
        kind = _infer_kind(value)
        series = series_for(key, kind)
        stored = float(value) if kind == NUMERIC else value
        units[key[0]][key[1]][key[2]] = FeatureSeries(
            kind=kind, entries=series.entries + ((new_hour, stored),)
        )

    touched = set(units) | set(out.los)
    new_units = {
        unit: UnitData(
            categories={cat: CategoryData(features=feats) for cat, feats in units.get(unit, {}).items()},
            los_remaining=out.los.get(unit),
        )
        for unit in UNITS
        if unit in touched
    }
    new_events = record.state_events + tuple(
        StateEvent(hour=new_hour, kind=kind) for kind in sorted(out.state, key=STATE_KINDS.index)
    )
    return PatientRecord(
        patient_id=record.patient_id,
        static_info=dict(record.static_info),
        units=new_units,
        total_hours=new_hour,
        state_events=new_events,
        icd_categories=frozenset(out.icd) if out.icd else frozenset(),
    )
