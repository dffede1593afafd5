import math

import numpy as np
import pytest

from pathsim.records import (
    BINARY,
    CATEGORICAL,
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
    RawObservation,
    RecordError,
    StateEvent,
    TimestepOutput,
    active_units,
    aggregate_hourly,
    build_feature_catalog,
    label_at,
    location_at,
    read_records,
    record_from_json,
    record_to_json,
    snapshot,
    terminal_kind,
    true_los_remaining,
    unit_intervals,
    write_records,
)

from helpers import simple_record


def obs(feature, ts, value=None, kind=NUMERIC, unit=ICU, category="RoutineVitalSigns"):
    return RawObservation(unit=unit, category=category, feature=feature, kind=kind, timestamp=ts, value=value)


# --- aggregation ----------------------------------------------------------------

def test_numeric_mean_within_hour():
    rec = aggregate_hourly(
        [obs("Heart Rate", 7.2, 80.0), obs("Heart Rate", 7.9, 84.0)], patient_id="p"
    )
    s = rec.feature_series((ICU, "RoutineVitalSigns", "Heart Rate"))
    assert s.entries == ((7, 82.0),)


def test_mode_tie_breaks_lexicographically():
    readings = [
        obs("Rhythm", 3.1, "Sinus", kind=CATEGORICAL),
        obs("Rhythm", 3.5, "Sinus", kind=CATEGORICAL),
        obs("Rhythm", 3.7, "AFib", kind=CATEGORICAL),
    ]
    rec = aggregate_hourly(readings, patient_id="p")
    assert rec.feature_series((ICU, "RoutineVitalSigns", "Rhythm")).at(3) == "Sinus"

    tied = aggregate_hourly(
        [obs("Rhythm", 3.1, "Sinus", kind=CATEGORICAL), obs("Rhythm", 3.2, "AFib", kind=CATEGORICAL)],
        patient_id="p",
    )
    assert tied.feature_series((ICU, "RoutineVitalSigns", "Rhythm")).at(3) == "AFib"


def test_missing_hours_have_no_entry():
    rec = aggregate_hourly([obs("HR", 4.0, 80.0)], patient_id="p", total_hours=10)
    s = rec.feature_series((ICU, "RoutineVitalSigns", "HR"))
    assert not s.has_entry(5)
    assert s.at(5) is None


def test_round_half_even_two_digits():
    rec = aggregate_hourly(
        [obs("X", 1.0, 0.105), obs("X", 1.5, 0.12)], patient_id="p"
    )
    assert rec.feature_series((ICU, "RoutineVitalSigns", "X")).at(1) == round(0.1125, 2)


def test_events_collapse_to_presence():
    rec = aggregate_hourly(
        [
            RawObservation(HOSPITAL, "Medications", "aspirin", EVENT, 2.1),
            RawObservation(HOSPITAL, "Medications", "aspirin", EVENT, 2.9),
        ],
        patient_id="p",
    )
    assert rec.feature_series((HOSPITAL, "Medications", "aspirin")).entries == ((2, None),)


def test_kind_mismatch_rejected_by_feature_name():
    rows = [obs("HR", 1.0, 80.0), obs("HR", 2.0, "fast", kind=CATEGORICAL)]
    with pytest.raises(RecordError, match="HR"):
        aggregate_hourly(rows, patient_id="p")


def test_aggregation_idempotent_and_permutation_invariant():
    rng = np.random.default_rng(7)
    rows = [obs("HR", float(ts), float(v)) for ts, v in zip(rng.uniform(0, 20, 50), rng.uniform(50, 120, 50))]
    rec = aggregate_hourly(rows, patient_id="p")
    series = rec.feature_series((ICU, "RoutineVitalSigns", "HR"))

    # permutation invariance
    perm = [rows[i] for i in rng.permutation(len(rows))]
    rec2 = aggregate_hourly(perm, patient_id="p")
    assert rec2.feature_series((ICU, "RoutineVitalSigns", "HR")).entries == series.entries

    # idempotence: re-aggregating the already-hourly entries is the identity
    rows3 = [obs("HR", float(h), v) for h, v in series.entries]
    rec3 = aggregate_hourly(rows3, patient_id="p")
    assert rec3.feature_series((ICU, "RoutineVitalSigns", "HR")).entries == series.entries


# --- snapshot / label -------------------------------------------------------------

def test_snapshot_identity_at_final_hour():
    rec = simple_record()
    assert snapshot(rec, rec.total_hours) == rec


def test_snapshot_zero_keeps_hour_zero_entries():
    rec = simple_record()
    snap = snapshot(rec, 0)
    assert snap.total_hours == 0
    hr = snap.feature_series((ED, "RoutineVitalSigns", "Heart Rate"))
    assert hr.entries == ((0, 80.0),)
    assert snap.icd_categories == frozenset()


def test_snapshot_filters_by_hour():
    rec = simple_record()
    snap = snapshot(rec, 3)
    rhythm = snap.feature_series((ED, "RoutineVitalSigns", "Heart Rhythm"))
    assert rhythm.entries == ((2, "Sinus Rhythm"),)
    assert all(e.hour <= 3 for e in snap.state_events)


def test_snapshot_out_of_range():
    rec = simple_record()
    with pytest.raises(RecordError):
        snapshot(rec, rec.total_hours + 1)
    with pytest.raises(RecordError):
        snapshot(rec, -1)


def test_label_contains_exactly_hour_features():
    rec = simple_record()
    lbl = label_at(rec, 5)
    assert (ED, "RoutineVitalSigns", "Heart Rhythm") in lbl.values
    assert lbl.values[(ED, "RoutineVitalSigns", "Heart Rate")] == 85.0
    assert (HOSPITAL, "Medications", "aspirin") not in lbl.events


def test_label_at_final_hour_has_terminal_and_icd():
    rec = simple_record()
    lbl = label_at(rec, rec.total_hours)
    assert HOSP_DISCHARGE in lbl.state
    assert lbl.icd == frozenset({"circulatory"})
    assert lbl.los == {}


def test_label_empty_hour_is_empty():
    rec = simple_record()
    lbl = label_at(rec, 9)
    assert lbl.values == {} and lbl.events == frozenset() and lbl.state == frozenset()
    # Hospital still active at hour 9, one hour before the exit at 10
    assert lbl.los == {HOSPITAL: 0}


def test_label_features_subset_of_snapshot():
    rec = simple_record()
    for t in range(1, rec.total_hours + 1):
        lbl = label_at(rec, t)
        snap = snapshot(rec, t)
        snap_keys = {k for k, s in snap.iter_features() if s.entries}
        assert lbl.feature_keys() <= snap_keys


# --- intervals / los ---------------------------------------------------------------

def test_unit_intervals_and_activity():
    rec = simple_record()
    spans = unit_intervals(rec)
    assert spans[ED] == [(0, 4)]
    assert spans[HOSPITAL] == [(4, 10)]
    assert active_units(rec, 0) == [ED]
    assert active_units(rec, 4) == [HOSPITAL]
    assert active_units(rec, 10) == []


def test_location_prefers_innermost_unit():
    rec = simple_record()
    assert location_at(rec, 2) == ED
    assert location_at(rec, 4) == HOSPITAL


def test_true_los_counts_hours_after_current():
    rec = simple_record()
    assert true_los_remaining(rec, ED, 0) == 3
    assert true_los_remaining(rec, ED, 3) == 0
    assert true_los_remaining(rec, ED, 4) is None
    assert true_los_remaining(rec, HOSPITAL, 4) == 5
    # truncated record: exit unknown
    snap = snapshot(rec, 6)
    assert true_los_remaining(snap, HOSPITAL, 6) is None


def test_death_closes_open_intervals():
    rec = PatientRecord(
        patient_id="d",
        total_hours=5,
        state_events=(StateEvent(2, ED_DISCHARGE), StateEvent(2, HOSP_ADMIT), StateEvent(5, DEATH)),
    )
    spans = unit_intervals(rec)
    assert spans[HOSPITAL] == [(2, 5)]
    assert terminal_kind(rec.state_kinds_at(5)) == DEATH


def test_terminal_kind_rules():
    assert terminal_kind({DEATH}) == DEATH
    assert terminal_kind({HOSP_DISCHARGE}) == HOSP_DISCHARGE
    assert terminal_kind({ED_DISCHARGE}) == ED_DISCHARGE
    assert terminal_kind({ED_DISCHARGE, HOSP_ADMIT}) is None
    assert terminal_kind(set()) is None


# --- invariants --------------------------------------------------------------------

def test_two_deaths_rejected():
    with pytest.raises(RecordError):
        PatientRecord(
            patient_id="x",
            total_hours=5,
            state_events=(StateEvent(2, DEATH), StateEvent(5, DEATH)),
        )


def test_death_must_be_final():
    with pytest.raises(RecordError):
        PatientRecord(
            patient_id="x",
            total_hours=5,
            state_events=(StateEvent(2, DEATH), StateEvent(3, ICU_DISCHARGE)),
        )


def test_series_invariants():
    with pytest.raises(RecordError):
        FeatureSeries(kind=NUMERIC, entries=((3, 1.0), (3, 2.0)))
    with pytest.raises(RecordError):
        FeatureSeries(kind=NUMERIC, entries=((3, 1.0), (2, 2.0)))
    with pytest.raises(RecordError):
        FeatureSeries(kind=EVENT, entries=((3, "x"),))
    with pytest.raises(RecordError):
        FeatureSeries(kind=CATEGORICAL, entries=((3, "82"),))
    with pytest.raises(RecordError):
        FeatureSeries(kind=NUMERIC, entries=((3, math.nan),))


def test_timestep_output_invariants():
    key = (ICU, "RoutineVitalSigns", "HR")
    with pytest.raises(RecordError):
        TimestepOutput(events=frozenset({key}), values={key: 1.0})
    with pytest.raises(RecordError):
        TimestepOutput(icd=frozenset({"injury"}))  # no terminal state
    with pytest.raises(RecordError):
        TimestepOutput(los={"Ward": 3})
    out = TimestepOutput(state=frozenset({DEATH}), icd=frozenset({"injury"}))
    assert out.icd == frozenset({"injury"})


# --- catalog / persistence ------------------------------------------------------------

def test_build_feature_catalog():
    rec = simple_record()
    catalog = build_feature_catalog([rec])
    assert catalog[(ED, "RoutineVitalSigns", "Heart Rate")] == NUMERIC
    assert catalog[(HOSPITAL, "Medications", "aspirin")] == EVENT
    assert catalog[(ED, "Triage", "Pain score")] == BINARY


def test_json_round_trip(tmp_path):
    rec = simple_record()
    assert record_from_json(record_to_json(rec)) == rec
    path = tmp_path / "cohort.jsonl"
    write_records(path, [rec, snapshot(rec, 3)])
    back = read_records(path)
    assert back == [rec, snapshot(rec, 3)]


def test_schema_version_required(tmp_path):
    doc = record_to_json(simple_record())
    doc["schema_version"] = 99
    with pytest.raises(RecordError):
        record_from_json(doc)
