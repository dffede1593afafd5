"""The nine task templates (ten rows) as simulator configurations.

Development tasks score a simulated window against ground truth; outcome
tasks derive a binary or multi-label answer from the trajectory terminal.
Binary outcome tasks are scored as accuracy on a balanced case set, and a
trajectory that fails to converge counts as an incorrect prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .metrics import (
    CaseScore,
    MISSING_SKIP,
    MetricReport,
    NormStats,
    aggregate_report,
    bootstrap_ci,
    score_window,
)
from .records import (
    DEATH,
    ED,
    ED_DISCHARGE,
    FeatureKey,
    HOSP_DISCHARGE,
    HOSPITAL,
    ICU,
    ICU_DISCHARGE,
    PatientRecord,
    build_feature_catalog,
    label_at,
    terminal_kind_of,
    unit_intervals,
)
from .simulate import SimConfig, Stepper, Trajectory, simulate

INPUT_RANDOM = "random_in_unit"
INPUT_ADMISSION = "unit_admission"
INPUT_PRE_DISCHARGE = "pre_discharge"

OUTCOME_BINARY = "binary"
OUTCOME_DIAGNOSIS = "diagnosis"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    unit: str
    kind: str  # development | outcome
    input_point: str
    output_window: int | None  # hours; None = direct single-step prediction
    stop_on: frozenset
    stop_on_transfer: bool = False
    gap_hours: int = 1
    los_override: int | None = None
    outcome: str | None = None  # binary | diagnosis
    positive_kind: str | None = None  # state kind defining the positive class
    score_categories: tuple[tuple[str, str], ...] | None = None


TASKS: dict[str, TaskSpec] = {
    spec.name: spec
    for spec in (
        TaskSpec(
            name="ed-vital-signs",
            unit=ED,
            kind="development",
            input_point=INPUT_RANDOM,
            output_window=24,
            stop_on=frozenset({ED_DISCHARGE, DEATH}),
            stop_on_transfer=True,
            score_categories=((ED, "RoutineVitalSigns"),),
        ),
        TaskSpec(
            name="ed-admission",
            unit=ED,
            kind="outcome",
            input_point=INPUT_ADMISSION,
            output_window=None,
            stop_on=frozenset({ED_DISCHARGE, DEATH}),
            stop_on_transfer=True,
            outcome=OUTCOME_BINARY,
            positive_kind="Hosp_admit",
        ),
        TaskSpec(
            name="ed-discharge-diagnosis",
            unit=ED,
            kind="outcome",
            input_point=INPUT_PRE_DISCHARGE,
            output_window=1,
            stop_on=frozenset({ED_DISCHARGE, DEATH}),
            stop_on_transfer=True,
            los_override=0,
            outcome=OUTCOME_DIAGNOSIS,
        ),
        TaskSpec(
            name="hospital-medications",
            unit=HOSPITAL,
            kind="development",
            input_point=INPUT_RANDOM,
            output_window=24,
            stop_on=frozenset({HOSP_DISCHARGE, DEATH}),
            score_categories=((HOSPITAL, "Medications"),),
        ),
        TaskSpec(
            name="hospital-lab-values",
            unit=HOSPITAL,
            kind="development",
            input_point=INPUT_RANDOM,
            output_window=24,
            stop_on=frozenset({HOSP_DISCHARGE, DEATH}),
            score_categories=((HOSPITAL, "Lab Results"),),
        ),
        TaskSpec(
            name="hospital-discharge-diagnosis",
            unit=HOSPITAL,
            kind="outcome",
            input_point=INPUT_PRE_DISCHARGE,
            output_window=1,
            stop_on=frozenset({HOSP_DISCHARGE, DEATH}),
            los_override=0,
            outcome=OUTCOME_DIAGNOSIS,
        ),
        TaskSpec(
            name="icu-vital-signs",
            unit=ICU,
            kind="development",
            input_point=INPUT_RANDOM,
            output_window=24,
            stop_on=frozenset({ICU_DISCHARGE, DEATH}),
            score_categories=((ICU, "RoutineVitalSigns"),),
        ),
        TaskSpec(
            name="icu-inputs",
            unit=ICU,
            kind="development",
            input_point=INPUT_RANDOM,
            output_window=24,
            stop_on=frozenset({ICU_DISCHARGE, DEATH}),
            score_categories=((ICU, "Inputs"),),
        ),
        TaskSpec(
            name="icu-imminent-mortality",
            unit=ICU,
            kind="outcome",
            input_point=INPUT_RANDOM,
            output_window=24,
            stop_on=frozenset({ICU_DISCHARGE, HOSP_DISCHARGE, DEATH}),
            outcome=OUTCOME_BINARY,
            positive_kind=DEATH,
        ),
        TaskSpec(
            name="icu-imminent-discharge",
            unit=ICU,
            kind="outcome",
            input_point=INPUT_RANDOM,
            output_window=72,
            stop_on=frozenset({ICU_DISCHARGE, DEATH}),
            outcome=OUTCOME_BINARY,
            positive_kind=ICU_DISCHARGE,
        ),
    )
}


class TaskError(ValueError):
    pass


def get_task(name: str) -> TaskSpec:
    if name not in TASKS:
        raise TaskError(f"unknown task {name!r}; valid: {', '.join(sorted(TASKS))}")
    return TASKS[name]


def _unit_span(record: PatientRecord, unit: str) -> tuple[int, int] | None:
    spans = unit_intervals(record).get(unit, [])
    for enter, exit_hour in spans:
        if exit_hour is not None and exit_hour > enter:
            return enter, exit_hour
    return None


def eligible_patients(records: Sequence[PatientRecord], task: TaskSpec) -> list[PatientRecord]:
    out = []
    for record in records:
        span = _unit_span(record, task.unit)
        if span is None:
            continue
        if task.outcome == OUTCOME_DIAGNOSIS:
            # diagnosis at this unit's discharge requires the stay to end there
            terminal = terminal_kind_of(record)
            if task.unit == ED and terminal != ED_DISCHARGE:
                continue
            if task.unit == HOSPITAL and terminal != HOSP_DISCHARGE:
                continue
        out.append(record)
    return out


def choose_input_hour(record: PatientRecord, task: TaskSpec, rng: np.random.Generator) -> int:
    span = _unit_span(record, task.unit)
    if span is None:
        raise TaskError(f"patient {record.patient_id} has no {task.unit} stay")
    enter, exit_hour = span
    if task.input_point == INPUT_ADMISSION:
        return enter
    if task.input_point == INPUT_PRE_DISCHARGE:
        return exit_hour - 1
    hi = max(enter, exit_hour - 2)
    return int(rng.integers(enter, hi + 1))


def truth_outcome(record: PatientRecord, task: TaskSpec, t0: int) -> bool:
    """Ground-truth binary label for an outcome task at input hour t0."""
    horizon = t0 + task.output_window if task.output_window else None
    for event in record.state_events:
        if event.kind != task.positive_kind or event.hour <= t0:
            continue
        if horizon is None or event.hour <= horizon:
            return True
    return False


def predicted_outcome(traj: Trajectory, task: TaskSpec) -> bool | None:
    """Predicted label; None when the rollout never converged."""
    if task.positive_kind in traj.state_kinds():
        return True
    return False if traj.converged else None


@dataclass
class TaskCase:
    patient_id: str
    t0: int
    trajectory: Trajectory
    truth: object = None
    pred: object = None
    correct: int | None = None


def run_task(
    records: Sequence[PatientRecord],
    task_name: str,
    stepper: Stepper,
    stats: NormStats,
    rng: np.random.Generator,
    max_cases: int | None = None,
    sim_overrides: SimConfig | None = None,
    catalog=None,
    tol_hours: int = 1,
) -> tuple[MetricReport, list[TaskCase]]:
    """Simulate every eligible case of a task and score it.

    An empty eligible set yields an empty report rather than an error.
    """
    task = get_task(task_name)
    eligible = eligible_patients(records, task)
    if max_cases is not None and len(eligible) > max_cases:
        idx = rng.choice(len(eligible), size=max_cases, replace=False)
        eligible = [eligible[i] for i in sorted(idx)]
    if catalog is None:
        catalog = build_feature_catalog(records)
    by_id = {r.patient_id: r for r in records}

    base = sim_overrides or SimConfig()
    cases: list[TaskCase] = []
    for record in eligible:
        t0 = choose_input_hour(record, task, rng)
        cfg = replace(
            base,
            max_steps=task.output_window if task.output_window else base.max_steps,
            stop_on=task.stop_on,
            stop_on_transfer=task.stop_on_transfer,
        )
        traj = simulate(record, t0, stepper, cfg, rng, catalog)
        cases.append(TaskCase(patient_id=record.patient_id, t0=t0, trajectory=traj))

    converged = [c for c in cases if c.trajectory.converged]
    extras: dict[str, float] = {
        "converged_rate": len(converged) / len(cases) if cases else 0.0,
        "n_eligible": float(len(cases)),
    }
    annotations = [f"task={task.name}"]

    if task.kind == "development":
        scores: list[CaseScore] = []
        keys = None
        if task.score_categories is not None:
            keys = frozenset(
                key for key in catalog if (key[0], key[1]) in task.score_categories
            )
        for case in cases:
            record = by_id[case.patient_id]
            span = _unit_span(record, task.unit)
            end = min(case.t0 + task.output_window, span[1], record.total_hours)
            truth_steps = [(h, label_at(record, h)) for h in range(case.t0 + 1, end + 1)]
            scores.append(
                score_window(
                    case.trajectory.predicted_steps(),
                    truth_steps,
                    stats,
                    tol_hours=tol_hours,
                    missing_policy=MISSING_SKIP,
                    keys=keys,
                )
            )
        report = aggregate_report(scores, MISSING_SKIP, extras=extras, annotations=annotations)
        return report, cases

    if task.outcome == OUTCOME_DIAGNOSIS:
        confusions = []
        for case in cases:
            truth = by_id[case.patient_id].icd_categories
            pred = frozenset()
            for _hour, out in case.trajectory.predicted_steps():
                if out.icd:
                    pred = out.icd
            case.truth, case.pred = truth, pred
            confusions.append(
                CaseScore(
                    confusion={
                        ("ICD", "categories", label): (
                            int(label in pred and label in truth),
                            int(label in pred and label not in truth),
                            int(label not in pred and label in truth),
                        )
                        for label in pred | truth
                    }
                )
            )
        report = aggregate_report(confusions, MISSING_SKIP, extras=extras, annotations=annotations)
        return report, cases

    # binary outcome: balanced accuracy with non-convergence counted wrong
    for case in cases:
        case.truth = truth_outcome(by_id[case.patient_id], task, case.t0)
        case.pred = predicted_outcome(case.trajectory, task)
        case.correct = int(case.pred is not None and case.pred == case.truth)
    pos = [c for c in cases if c.truth]
    neg = [c for c in cases if not c.truth]
    k = min(len(pos), len(neg))
    if k > 0:
        pos_idx = rng.choice(len(pos), size=k, replace=False)
        neg_idx = rng.choice(len(neg), size=k, replace=False)
        balanced = [pos[i] for i in pos_idx] + [neg[i] for i in neg_idx]
        annotations.append(f"balanced={k}+{k}")
    else:
        balanced = cases
        annotations.append("unbalanced: single-class eval set")
    correct = [c.correct for c in balanced]
    extras["accuracy"] = float(np.mean(correct)) if correct else 0.0
    if correct:
        lo, hi = bootstrap_ci([float(c) for c in correct], resamples=2000, rng=rng)
        extras["accuracy_ci_lo"], extras["accuracy_ci_hi"] = lo, hi
    report = aggregate_report(
        [CaseScore() for _ in balanced], MISSING_SKIP, extras=extras, annotations=annotations
    )
    return report, cases
