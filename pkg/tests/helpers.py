"""Shared builders for tests: small records and seeded random outputs."""

from __future__ import annotations

import numpy as np

from pathsim.records import (
    BINARY,
    CATEGORICAL,
    CategoryData,
    DEATH,
    ED,
    ED_DISCHARGE,
    EVENT,
    FeatureSeries,
    HOSP_ADMIT,
    HOSP_DISCHARGE,
    HOSPITAL,
    ICU,
    ICU_ADMIT,
    ICU_DISCHARGE,
    NUMERIC,
    PatientRecord,
    StateEvent,
    TimestepOutput,
    UNITS,
    UnitData,
)

_WORDS = (
    "Heart", "Rate", "Blood", "Pressure", "Oxygen", "Lactate", "Sodium",
    "Glucose", "Braden", "Rhythm", "Respiratory", "Temp", "Urine", "Output",
    "systolic", "diastolic", "(mmHg)", "(mg/dL)", "score",
)
_CATEGORIES = ("RoutineVitalSigns", "Lab Results", "Medications", "Chart Events", "Triage")
_CAT_VALUES = ("Sinus Rhythm", "AFib", "Normal", "Mottled", "Weak", "Adequate", "Very Poor")
_ICD = ("circulatory", "respiratory", "injury", "digestive", "neoplasms")


def rand_name(rng: np.random.Generator) -> str:
    n = rng.integers(1, 4)
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def random_timestep_output(rng: np.random.Generator) -> TimestepOutput:
    """A random valid TimestepOutput exercising every field of the grammar."""
    los = {}
    for unit in UNITS:
        if rng.random() < 0.4:
            los[unit] = int(rng.integers(0, 200))
    state: set[str] = set()
    roll = rng.random()
    if roll < 0.12:
        state = {DEATH}
    elif roll < 0.24:
        state = {HOSP_DISCHARGE}
    elif roll < 0.32:
        state = {ED_DISCHARGE, HOSP_ADMIT}
    elif roll < 0.40:
        state = {ED_DISCHARGE}
    elif roll < 0.46:
        state = {ICU_ADMIT}
    elif roll < 0.52:
        state = {ICU_DISCHARGE}

    events = set()
    values = {}
    taken = set()
    for _ in range(int(rng.integers(0, 8))):
        key = (
            str(rng.choice(UNITS)),
            str(rng.choice(_CATEGORIES)),
            rand_name(rng),
        )
        if key in taken:
            continue
        taken.add(key)
        kind = rng.choice([EVENT, NUMERIC, CATEGORICAL, BINARY])
        if kind == EVENT:
            events.add(key)
        elif kind == NUMERIC:
            values[key] = round(float(rng.uniform(-50, 250)), 2)
        elif kind == BINARY:
            values[key] = bool(rng.random() < 0.5)
        else:
            values[key] = str(rng.choice(_CAT_VALUES))

    icd = None
    from pathsim.records import terminal_kind

    if terminal_kind(state) is not None and rng.random() < 0.7:
        k = int(rng.integers(1, 4))
        icd = frozenset(rng.choice(_ICD, size=k, replace=False).tolist())
    return TimestepOutput(
        los=los, state=frozenset(state), events=frozenset(events), values=values, icd=icd
    )


def series(kind: str, entries) -> FeatureSeries:
    return FeatureSeries(kind=kind, entries=tuple(entries))


def simple_record(total_hours: int = 10) -> PatientRecord:
    """An ED -> Hospital stay with a few features, discharged at the end."""
    hr = series(NUMERIC, [(h, 80.0 + h) for h in range(0, total_hours - 1)])
    rhythm = series(CATEGORICAL, [(2, "Sinus Rhythm"), (5, "AFib")])
    med = series(EVENT, [(3, None), (7, None)])
    flag = series(BINARY, [(1, True), (4, False)])
    ed_exit = 4
    return PatientRecord(
        patient_id="p0",
        static_info={"age": "63", "sex": "F"},
        units={
            ED: UnitData(
                categories={
                    "Triage": CategoryData(features={"Pain score": flag}),
                    "RoutineVitalSigns": CategoryData(features={"Heart Rate": hr, "Heart Rhythm": rhythm}),
                }
            ),
            HOSPITAL: UnitData(categories={"Medications": CategoryData(features={"aspirin": med})}),
        },
        total_hours=total_hours,
        state_events=(
            StateEvent(hour=ed_exit, kind=ED_DISCHARGE),
            StateEvent(hour=ed_exit, kind=HOSP_ADMIT),
            StateEvent(hour=total_hours, kind=HOSP_DISCHARGE),
        ),
        icd_categories=frozenset({"circulatory"}),
    )
