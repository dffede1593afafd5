import math

import numpy as np
import pytest

from pathsim.cohort import (
    CohortConfig,
    EventFeature,
    ICD_CATEGORIES,
    IcdRule,
    NumericFeature,
    ar1_series,
    config_from_json,
    config_to_json,
    default_config,
    generate_cohort,
    generate_patient,
    plan_stay,
    write_cohort,
)
from pathsim.codec import parse_output, render_output
from pathsim.records import (
    DEATH,
    ED,
    HOSPITAL,
    build_feature_catalog,
    label_at,
    read_records,
    snapshot,
    terminal_kind_of,
)


def test_icd_scheme_has_eighteen_labels():
    assert len(ICD_CATEGORIES) == 18
    assert len(set(ICD_CATEGORIES)) == 18


def test_ar1_long_run_mean():
    rng = np.random.default_rng(0)
    series = ar1_series(mean=80.0, coeff=0.9, noise=2.0, hours=10_000, rng=rng)
    assert abs(series.mean() - 80.0) < 2.0
    # stationary sd = noise / sqrt(1 - coeff^2)
    assert series.std() == pytest.approx(2.0 / math.sqrt(1 - 0.81), rel=0.15)


def test_death_hazard_zero_never_dies():
    cfg = default_config(n_patients=60, seed=1)
    cfg = CohortConfig(**{**cfg.__dict__, "death_hazard_icu": 0.0, "death_hazard_hosp": 0.0})
    for record in generate_cohort(cfg):
        assert terminal_kind_of(record) != DEATH


def test_full_missingness_removes_feature():
    cfg = CohortConfig(
        n_patients=5,
        seed=2,
        admit_prob=0.0,
        numeric_features=(NumericFeature(ED, "Vitals", "HR", 80, 0.8, 2, missing=1.0),),
    )
    for record in generate_cohort(cfg):
        assert record.feature_series((ED, "Vitals", "HR")) is None


def test_fixed_seed_is_byte_identical(tmp_path):
    cfg = default_config(n_patients=8, seed=7)
    write_cohort(cfg, tmp_path / "a.jsonl")
    write_cohort(cfg, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_empty_cohort_is_schema_valid(tmp_path):
    cfg = default_config(n_patients=0)
    assert write_cohort(cfg, tmp_path / "empty.jsonl") == 0
    assert read_records(tmp_path / "empty.jsonl") == []


def test_records_satisfy_invariants_and_codec_round_trip():
    cfg = default_config(n_patients=12, seed=3)
    records = generate_cohort(cfg)
    catalog = build_feature_catalog(records)
    for record in records:
        assert terminal_kind_of(record) is not None
        assert record.icd_categories
        snapshot(record, record.total_hours // 2)  # validates internally
        for t in range(1, record.total_hours + 1):
            lbl = label_at(record, t)
            res = parse_output(render_output(lbl), catalog)
            assert res.clean
            assert res.output == lbl


def test_no_feature_entries_at_terminal_hour():
    cfg = default_config(n_patients=12, seed=4)
    for record in generate_cohort(cfg):
        lbl = label_at(record, record.total_hours)
        assert not lbl.events and not lbl.values
        assert lbl.state


def test_transition_frequencies_match_hazards():
    cfg = default_config(n_patients=1000, seed=5)
    records = generate_cohort(cfg)
    admitted = sum(1 for r in records if any(e.kind == "Hosp_admit" for e in r.state_events))
    p = cfg.admit_prob
    sigma = math.sqrt(1000 * p * (1 - p))
    assert abs(admitted - 1000 * p) < 4 * sigma

    among_admitted = [r for r in records if any(e.kind == "Hosp_admit" for e in r.state_events)]
    icu = sum(1 for r in among_admitted if any(e.kind == "ICU_admit" for e in r.state_events))
    n = len(among_admitted)
    sigma = math.sqrt(n * cfg.icu_prob * (1 - cfg.icu_prob))
    assert abs(icu - n * cfg.icu_prob) < 4 * sigma


def test_periodic_events_fire_on_schedule():
    cfg = CohortConfig(
        n_patients=4,
        seed=6,
        admit_prob=1.0,
        icu_prob=0.0,
        death_hazard_icu=0.0,
        death_hazard_hosp=0.0,
        event_features=(EventFeature(HOSPITAL, "Medications", "aspirin", period=4),),
    )
    for record in generate_cohort(cfg):
        series = record.feature_series((HOSPITAL, "Medications", "aspirin"))
        enter = next(e.hour for e in record.state_events if e.kind == "Hosp_admit")
        hours = [h for h, _ in series.entries]
        assert hours == [h for h in range(enter, record.total_hours) if (h - enter) % 4 == 0]


def test_icd_rules_condition_on_fired_events():
    cfg = CohortConfig(
        n_patients=30,
        seed=7,
        admit_prob=1.0,
        icu_prob=0.0,
        death_hazard_hosp=0.0,
        event_features=(EventFeature(HOSPITAL, "Medications", "heparin sodium", period=2),),
        icd_rules=(IcdRule("heparin sodium", "circulatory", 1.0),),
    )
    for record in generate_cohort(cfg):
        assert "circulatory" in record.icd_categories


def test_config_json_round_trip(tmp_path):
    cfg = default_config(n_patients=3, seed=11)
    doc = config_to_json(cfg)
    assert config_from_json(doc) == cfg
    with pytest.raises(ValueError):
        config_from_json({**doc, "bogus_key": 1})


def test_plan_stay_shapes():
    cfg = default_config()
    rng = np.random.default_rng(8)
    for _ in range(200):
        plan = plan_stay(cfg, rng)
        assert plan.ed_exit >= cfg.ed_los[0]
        if plan.icu_span is not None:
            assert plan.ed_exit < plan.icu_span[0] < plan.icu_span[1] <= plan.hosp_exit
        if plan.death_hour is not None:
            assert plan.ed_exit < plan.death_hour <= plan.total_hours
