"""Reproducible synthetic cohorts with multi-unit stays.

Stays run ED -> (home | Hospital) with an optional ICU interlude and an
hourly death hazard. Numeric vitals follow a mean-reverting AR(1) process
with dropout; categorical states drift; medications fire periodically or by
hazard. Diagnosis labels are drawn conditionally on which event features
fired, so outcome prediction is learnable. Dynamics are deliberately simple
enough for a small model to learn; clinical realism is a non-goal.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .records import (
    BINARY,
    CATEGORICAL,
    DEATH,
    ED,
    ED_DISCHARGE,
    EVENT,
    HOSP_ADMIT,
    HOSP_DISCHARGE,
    HOSPITAL,
    ICU,
    ICU_ADMIT,
    ICU_DISCHARGE,
    NUMERIC,
    PatientRecord,
    RawObservation,
    StateEvent,
    aggregate_hourly,
    write_records,
)

# Fixed 18-label diagnosis scheme; placeholder chapter-style names.
ICD_CATEGORIES = (
    "infectious", "neoplasms", "endocrine", "blood", "mental", "nervous",
    "circulatory", "respiratory", "digestive", "genitourinary", "pregnancy",
    "skin", "musculoskeletal", "congenital", "perinatal", "symptoms",
    "injury", "external",
)


@dataclass(frozen=True)
class NumericFeature:
    unit: str
    category: str
    name: str
    mean: float
    coeff: float  # AR(1) stationarity coefficient, |coeff| < 1
    noise: float
    missing: float = 0.3
    digits: int = 1
    period: int = 1  # recorded only on hours where (h - enter) % period == 0

    def __post_init__(self):
        if not -1.0 < self.coeff < 1.0:
            raise ValueError("stationarity coefficient must lie in (-1, 1)")
        if not 0.0 <= self.missing <= 1.0:
            raise ValueError("missing rate must lie in [0, 1]")


@dataclass(frozen=True)
class CategoricalFeature:
    unit: str
    category: str
    name: str
    states: tuple[str, ...]
    switch_prob: float = 0.15
    missing: float = 0.5


@dataclass(frozen=True)
class BinaryFeature:
    unit: str
    category: str
    name: str
    p_true: float = 0.5
    missing: float = 0.7


@dataclass(frozen=True)
class EventFeature:
    """Fires periodically from unit entry (hazard == 0) or by hourly hazard."""

    unit: str
    category: str
    name: str
    period: int = 0
    hazard: float = 0.0

    def __post_init__(self):
        if (self.period > 0) == (self.hazard > 0):
            raise ValueError("set exactly one of period or hazard")


@dataclass(frozen=True)
class IcdRule:
    feature_name: str
    label: str
    prob: float = 0.8


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 100
    seed: int = 0
    ed_los: tuple[int, int] = (3, 8)
    admit_prob: float = 0.55
    hosp_los: tuple[int, int] = (8, 18)
    icu_prob: float = 0.4
    icu_los: tuple[int, int] = (3, 7)
    death_hazard_icu: float = 0.015
    death_hazard_hosp: float = 0.002
    dual_reading_prob: float = 0.1  # extra sub-hour reading, exercises averaging
    numeric_features: tuple[NumericFeature, ...] = ()
    categorical_features: tuple[CategoricalFeature, ...] = ()
    binary_features: tuple[BinaryFeature, ...] = ()
    event_features: tuple[EventFeature, ...] = ()
    icd_rules: tuple[IcdRule, ...] = ()
    icd_fallback: str = "symptoms"

    def __post_init__(self):
        for p in (self.admit_prob, self.icu_prob, self.death_hazard_icu, self.death_hazard_hosp):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        for lo, hi in (self.ed_los, self.hosp_los, self.icu_los):
            if not 1 <= lo <= hi:
                raise ValueError("los ranges must satisfy 1 <= lo <= hi")
        for rule in self.icd_rules:
            if rule.label not in ICD_CATEGORIES:
                raise ValueError(f"unknown ICD label {rule.label!r}")
        if self.icd_fallback not in ICD_CATEGORIES:
            raise ValueError(f"unknown ICD label {self.icd_fallback!r}")


def default_config(n_patients: int = 100, seed: int = 0) -> CohortConfig:
    """A compact, learnable catalog across the three units."""
    vit = "RoutineVitalSigns"
    return CohortConfig(
        n_patients=n_patients,
        seed=seed,
        numeric_features=(
            NumericFeature(ED, vit, "Heart Rate", 88, 0.8, 4, missing=0.25),
            NumericFeature(ED, vit, "Respiratory Rate", 18, 0.7, 1.5, missing=0.35, digits=0),
            NumericFeature(ED, vit, "O2 saturation", 96, 0.6, 1.2, missing=0.35, digits=0),
            NumericFeature(HOSPITAL, vit, "Heart Rate", 82, 0.85, 3, missing=0.3),
            NumericFeature(HOSPITAL, vit, "Temperature", 37.1, 0.7, 0.3, missing=0.4),
            NumericFeature(HOSPITAL, "Lab Results", "Lactate", 2.0, 0.9, 0.4, missing=0.1, period=6),
            NumericFeature(HOSPITAL, "Lab Results", "Sodium", 139, 0.8, 2, missing=0.1, digits=0, period=8),
            NumericFeature(ICU, vit, "Heart Rate", 95, 0.85, 5, missing=0.15),
            NumericFeature(ICU, vit, "Arterial Blood Pressure mean", 75, 0.8, 6, missing=0.2, digits=0),
            NumericFeature(ICU, vit, "O2 saturation pulseoxymetry", 95, 0.6, 1.5, missing=0.2, digits=0),
        ),
        categorical_features=(
            CategoricalFeature(ED, vit, "Heart Rhythm", ("Sinus Rhythm", "AFib"), 0.1, missing=0.5),
            CategoricalFeature(ICU, "Chart Events", "Braden Nutrition",
                               ("Adequate", "Probably Inadequate", "Very Poor"), 0.2, missing=0.6),
            CategoricalFeature(ICU, "Chart Events", "RLE Color", ("Normal", "Mottled"), 0.1, missing=0.6),
        ),
        binary_features=(
            BinaryFeature(ICU, "Chart Events", "ST Segment Monitoring On", 0.8, missing=0.5),
        ),
        event_features=(
            EventFeature(ED, "Medications", "acetaminophen", hazard=0.2),
            EventFeature(HOSPITAL, "Medications", "aspirin", period=4),
            EventFeature(HOSPITAL, "Medications", "heparin sodium", period=6),
            EventFeature(HOSPITAL, "Procedures", "Chest X-Ray", hazard=0.08),
            EventFeature(ICU, "Inputs", "norepinephrine", hazard=0.35),
            EventFeature(ICU, "Inputs", "propofol", period=3),
        ),
        icd_rules=(
            IcdRule("norepinephrine", "circulatory", 0.9),
            IcdRule("heparin sodium", "circulatory", 0.5),
            IcdRule("Chest X-Ray", "respiratory", 0.7),
            IcdRule("acetaminophen", "injury", 0.4),
            IcdRule("Lactate", "endocrine", 0.3),
        ),
    )


def ar1_step(value: float, mean: float, coeff: float, noise: float, rng: np.random.Generator) -> float:
    return mean + coeff * (value - mean) + noise * rng.standard_normal()


def ar1_series(mean: float, coeff: float, noise: float, hours: int, rng: np.random.Generator) -> np.ndarray:
    """The latent mean-reverting process, starting at its stationary mean."""
    out = np.empty(hours)
    value = mean
    for h in range(hours):
        value = ar1_step(value, mean, coeff, noise, rng)
        out[h] = value
    return out


@dataclass(frozen=True)
class StayPlan:
    ed_exit: int
    hosp_exit: int | None
    icu_span: tuple[int, int] | None
    death_hour: int | None

    @property
    def total_hours(self) -> int:
        if self.death_hour is not None:
            return self.death_hour
        return self.hosp_exit if self.hosp_exit is not None else self.ed_exit


def plan_stay(cfg: CohortConfig, rng: np.random.Generator) -> StayPlan:
    ed_exit = int(rng.integers(cfg.ed_los[0], cfg.ed_los[1] + 1))
    if rng.random() >= cfg.admit_prob:
        return StayPlan(ed_exit=ed_exit, hosp_exit=None, icu_span=None, death_hour=None)
    hosp_los = int(rng.integers(cfg.hosp_los[0], cfg.hosp_los[1] + 1))
    hosp_exit = ed_exit + hosp_los
    icu_span = None
    if rng.random() < cfg.icu_prob:
        icu_los = int(rng.integers(cfg.icu_los[0], cfg.icu_los[1] + 1))
        icu_los = min(icu_los, hosp_los - 2) if hosp_los > 3 else 1
        if icu_los >= 1:
            latest_start = hosp_exit - icu_los - 1
            start = int(rng.integers(ed_exit + 1, max(ed_exit + 1, latest_start) + 1))
            icu_span = (start, start + icu_los)
    death_hour = None
    for h in range(ed_exit, hosp_exit):
        in_icu = icu_span is not None and icu_span[0] <= h < icu_span[1]
        hazard = cfg.death_hazard_icu if in_icu else cfg.death_hazard_hosp
        if hazard and rng.random() < hazard:
            death_hour = h + 1
            break
    if death_hour is not None and death_hour >= hosp_exit:
        death_hour = None
    return StayPlan(ed_exit=ed_exit, hosp_exit=hosp_exit, icu_span=icu_span, death_hour=death_hour)


def _unit_hours(plan: StayPlan, unit: str) -> tuple[int, int]:
    """[enter, exit) hours during which the unit records features."""
    end = plan.total_hours
    if unit == ED:
        return 0, min(plan.ed_exit, end)
    if unit == HOSPITAL:
        if plan.hosp_exit is None:
            return 0, 0
        return plan.ed_exit, end
    if plan.icu_span is None:
        return 0, 0
    return plan.icu_span[0], min(plan.icu_span[1], end)


def generate_patient(cfg: CohortConfig, rng: np.random.Generator, patient_id: str) -> PatientRecord:
    """One synthetic stay satisfying every record invariant."""
    plan = plan_stay(cfg, rng)
    total = plan.total_hours
    observations: list[RawObservation] = []
    fired: set[str] = set()

    def stamp(h: int) -> float:
        return h + float(rng.uniform(0, 0.99))

    for spec in cfg.numeric_features:
        enter, exit_ = _unit_hours(plan, spec.unit)
        if exit_ <= enter:
            continue
        values = ar1_series(spec.mean, spec.coeff, spec.noise, exit_ - enter, rng)
        for offset, latent in enumerate(values):
            h = enter + offset
            if spec.period > 1 and offset % spec.period != 0:
                continue
            if rng.random() < spec.missing:
                continue
            value = round(float(latent), spec.digits)
            observations.append(
                RawObservation(spec.unit, spec.category, spec.name, NUMERIC, stamp(h), value)
            )
            if rng.random() < cfg.dual_reading_prob:
                second = round(float(latent + spec.noise * rng.standard_normal() * 0.3), spec.digits)
                observations.append(
                    RawObservation(spec.unit, spec.category, spec.name, NUMERIC, stamp(h), second)
                )
            fired.add(spec.name)

    for spec in cfg.categorical_features:
        enter, exit_ = _unit_hours(plan, spec.unit)
        state = spec.states[int(rng.integers(0, len(spec.states)))]
        for h in range(enter, exit_):
            if rng.random() < spec.switch_prob:
                others = [s for s in spec.states if s != state]
                state = others[int(rng.integers(0, len(others)))]
            if rng.random() < spec.missing:
                continue
            observations.append(
                RawObservation(spec.unit, spec.category, spec.name, CATEGORICAL, stamp(h), state)
            )
            fired.add(spec.name)

    for spec in cfg.binary_features:
        enter, exit_ = _unit_hours(plan, spec.unit)
        for h in range(enter, exit_):
            if rng.random() < spec.missing:
                continue
            observations.append(
                RawObservation(
                    spec.unit, spec.category, spec.name, BINARY, stamp(h),
                    bool(rng.random() < spec.p_true),
                )
            )
            fired.add(spec.name)

    for spec in cfg.event_features:
        enter, exit_ = _unit_hours(plan, spec.unit)
        for h in range(enter, exit_):
            hit = (
                (h - enter) % spec.period == 0
                if spec.period
                else rng.random() < spec.hazard
            )
            if hit:
                observations.append(
                    RawObservation(spec.unit, spec.category, spec.name, EVENT, stamp(h))
                )
                fired.add(spec.name)

    state_events = []
    if plan.hosp_exit is not None:
        state_events.append(StateEvent(plan.ed_exit, ED_DISCHARGE))
        state_events.append(StateEvent(plan.ed_exit, HOSP_ADMIT))
        if plan.icu_span is not None and plan.icu_span[0] < total:
            state_events.append(StateEvent(plan.icu_span[0], ICU_ADMIT))
            if plan.death_hour is None or plan.icu_span[1] < plan.death_hour:
                state_events.append(StateEvent(plan.icu_span[1], ICU_DISCHARGE))
        if plan.death_hour is not None:
            state_events.append(StateEvent(plan.death_hour, DEATH))
        else:
            state_events.append(StateEvent(plan.hosp_exit, HOSP_DISCHARGE))
    else:
        state_events.append(StateEvent(plan.ed_exit, ED_DISCHARGE))

    icd = set()
    for rule in cfg.icd_rules:
        if rule.feature_name in fired and rng.random() < rule.prob:
            icd.add(rule.label)
    if not icd:
        icd.add(cfg.icd_fallback)

    age = int(rng.integers(22, 90))
    sex = "F" if rng.random() < 0.5 else "M"
    mrn = patient_id.split("-")[-1]
    return aggregate_hourly(
        observations,
        patient_id=patient_id,
        static_info={"mrn": mrn, "age": str(age), "sex": sex},
        state_events=state_events,
        icd_categories=icd,
        total_hours=total,
    )


def generate_cohort(cfg: CohortConfig) -> list[PatientRecord]:
    """n_patients records; a fixed seed yields byte-identical output."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_patients)
    return [
        generate_patient(cfg, np.random.default_rng(seeds[i]), patient_id=f"synth-{i:05d}")
        for i in range(cfg.n_patients)
    ]


def write_cohort(cfg: CohortConfig, path: str | Path) -> int:
    return write_records(path, generate_cohort(cfg))


# --- config (de)serialization --------------------------------------------------------

_FEATURE_TYPES = {
    "numeric_features": NumericFeature,
    "categorical_features": CategoricalFeature,
    "binary_features": BinaryFeature,
    "event_features": EventFeature,
    "icd_rules": IcdRule,
}


def config_to_json(cfg: CohortConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    for key in _FEATURE_TYPES:
        doc[key] = [dataclasses.asdict(item) for item in getattr(cfg, key)]
    return doc


def config_from_json(doc: dict) -> CohortConfig:
    kwargs = dict(doc)
    for key, cls in _FEATURE_TYPES.items():
        if key in kwargs:
            items = []
            for item in kwargs[key]:
                item = dict(item)
                for f in ("states",):
                    if f in item and isinstance(item[f], list):
                        item[f] = tuple(item[f])
                items.append(cls(**item))
            kwargs[key] = tuple(items)
    for f in ("ed_los", "hosp_los", "icu_los"):
        if f in kwargs and isinstance(kwargs[f], list):
            kwargs[f] = tuple(kwargs[f])
    unknown = set(kwargs) - {f.name for f in dataclasses.fields(CohortConfig)}
    if unknown:
        raise ValueError(f"unknown cohort config keys: {sorted(unknown)}")
    return CohortConfig(**kwargs)


def load_config(path: str | Path) -> CohortConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_json(json.load(fh))


def save_config(cfg: CohortConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_json(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
