"""Metric tests built around independent naive references.

The reference implementations below are deliberately plain loops, written
against the metric definitions rather than the library code; the library must
match them on random instances.
"""

import itertools
import math

import numpy as np
import pytest

from pathsim.metrics import (
    MISSING_MAX_ERROR,
    MISSING_SKIP,
    MetricError,
    NormStats,
    aggregate_f1,
    aggregate_report,
    bootstrap_ci,
    compression_ratio,
    event_confusion,
    event_f1,
    fit_norm_stats,
    modified_accuracy,
    modified_mae,
    normalize,
    score_next_step,
    token_accounting,
)
from pathsim.records import ICU, TimestepOutput

from helpers import simple_record

KEYS = [(ICU, "Vitals", name) for name in "ABCDEFGHIJ"]


# --- naive references ------------------------------------------------------------------

def naive_f1(cases):
    """F1 from first principles: pool counts, average per-feature F1."""
    keys = set()
    for pred, truth in cases:
        keys |= set(pred) | set(truth)
    per_feature = {}
    total_tp = total_fp = total_fn = 0
    for key in keys:
        tp = fp = fn = 0
        for pred, truth in cases:
            if key in pred and key in truth:
                tp += 1
            elif key in pred:
                fp += 1
            elif key in truth:
                fn += 1
        total_tp += tp
        total_fp += fp
        total_fn += fn
        per_feature[key] = 2 * tp / (2 * tp + fp + fn)
    if not keys:
        return 1.0, 1.0, {}
    micro = 2 * total_tp / (2 * total_tp + total_fp + total_fn)
    macro = sum(per_feature.values()) / len(per_feature)
    return micro, macro, per_feature


def naive_modified_mae(preds, truth, value_range, tol, policy):
    hour, tv = truth
    candidates = [(ph, pv) for ph, pv in preds if abs(ph - hour) <= tol]
    if not candidates:
        return 1.0 if policy == MISSING_MAX_ERROR else None
    best_dh = min(abs(ph - hour) for ph, _ in candidates)
    chosen = min(ph for ph, _ in candidates if abs(ph - hour) == best_dh)
    pv = next(v for ph, v in candidates if ph == chosen)
    p1, p99 = value_range
    if p1 == p99:
        return 0.0

    def norm(x):
        x = max(min(x, p99), p1)
        return (x - p1) / (p99 - p1)

    return abs(norm(pv) - norm(tv))


def naive_modified_accuracy(preds, truth, tol, policy):
    hour, tv = truth
    within = [pv for ph, pv in preds if abs(ph - hour) <= tol]
    if not within:
        return 0 if policy == MISSING_MAX_ERROR else None
    return int(tv in within)


def naive_bootstrap(scores, level, resamples, seed):
    n = len(scores)
    if n ** n <= resamples:
        means = sorted(
            sum(scores[i] for i in combo) / n
            for combo in itertools.product(range(n), repeat=n)
        )
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=(resamples, n))
        means = sorted(sum(scores[i] for i in row) / n for row in idx)

    def pct(q):
        if len(means) == 1:
            return means[0]
        rank = q / 100 * (len(means) - 1)
        lo = math.floor(rank)
        hi = min(lo + 1, len(means) - 1)
        return means[lo] * (1 - (rank - lo)) + means[hi] * (rank - lo)

    alpha = (1 - level) / 2
    return pct(100 * alpha), pct(100 * (1 - alpha))


# --- normalize ---------------------------------------------------------------------------

def test_normalize_endpoints_and_clipping():
    stats = NormStats(ranges={KEYS[0]: (50.0, 150.0)})
    assert normalize(KEYS[0], 50.0, stats) == 0.0
    assert normalize(KEYS[0], 150.0, stats) == 1.0
    assert normalize(KEYS[0], 200.0, stats) == 1.0
    assert normalize(KEYS[0], 0.0, stats) == 0.0
    assert normalize(KEYS[0], 75.0, stats) == 0.25


def test_normalize_degenerate_and_unknown():
    stats = NormStats(ranges={KEYS[0]: (10.0, 10.0)})
    assert normalize(KEYS[0], 3.0, stats) == 0.5
    assert normalize(KEYS[1], 3.0, stats) is None
    ident = NormStats(ranges={}, unknown_policy="identity")
    assert normalize(KEYS[1], 0.4, ident) == 0.4
    assert normalize(KEYS[1], 7.0, ident) == 1.0


def test_fit_norm_stats_orders_percentiles():
    stats = fit_norm_stats([simple_record()])
    for p1, p99 in stats.ranges.values():
        assert p1 <= p99


# --- event F1 -----------------------------------------------------------------------------

def test_event_f1_worked_example():
    micro, _, _ = event_f1([[{KEYS[0], KEYS[1]}, {KEYS[0], KEYS[2]}]])
    assert micro == pytest.approx(0.5)  # TP=1 FP=1 FN=1


def test_event_f1_perfect_and_vacuous():
    micro, macro, _ = event_f1([({KEYS[0]}, {KEYS[0]})])
    assert micro == 1.0 and macro == 1.0
    micro, macro, per = event_f1([(set(), set()), (set(), set())])
    assert micro == 1.0 and macro == 1.0 and per == {}


def test_event_f1_matches_naive_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n_cases = rng.integers(1, 8)
        cases = []
        for _ in range(n_cases):
            pred = {KEYS[i] for i in rng.choice(10, size=rng.integers(0, 6), replace=False)}
            truth = {KEYS[i] for i in rng.choice(10, size=rng.integers(0, 6), replace=False)}
            cases.append((pred, truth))
        micro, macro, per = event_f1(cases)
        n_micro, n_macro, n_per = naive_f1(cases)
        assert micro == pytest.approx(n_micro, abs=1e-9)
        assert macro == pytest.approx(n_macro, abs=1e-9)
        assert per == n_per


def test_micro_equals_pooled_counts_macro_equals_mean():
    rng = np.random.default_rng(11)
    cases = []
    for _ in range(20):
        pred = {KEYS[i] for i in rng.choice(10, size=3, replace=False)}
        truth = {KEYS[i] for i in rng.choice(10, size=3, replace=False)}
        cases.append((pred, truth))
    micro, macro, per = event_f1(cases)
    pooled = {}
    for pred, truth in cases:
        for k, c in event_confusion(pred, truth).items():
            agg = pooled.setdefault(k, [0, 0, 0])
            for i in range(3):
                agg[i] += c[i]
    tp = sum(v[0] for v in pooled.values())
    fp = sum(v[1] for v in pooled.values())
    fn = sum(v[2] for v in pooled.values())
    assert micro == pytest.approx(2 * tp / (2 * tp + fp + fn))
    assert macro == pytest.approx(sum(per.values()) / len(per))


# --- modified MAE / accuracy -----------------------------------------------------------------

def test_modified_mae_examples():
    rng5 = (0.0, 1.0)
    assert modified_mae([(4, 0.5)], (4, 0.4), rng5) == pytest.approx(0.1)
    assert modified_mae([], (4, 0.4), rng5) == 1.0
    assert modified_mae([], (4, 0.4), rng5, missing_policy=MISSING_SKIP) is None
    assert modified_mae([(5, 0.5)], (4, 0.4), rng5, tol_hours=1) == pytest.approx(0.1)
    assert modified_mae([(6, 0.5)], (4, 0.4), rng5, tol_hours=1) == 1.0


def test_modified_mae_tie_prefers_earlier_hour():
    rng5 = (0.0, 1.0)
    err = modified_mae([(3, 0.9), (5, 0.4)], (4, 0.4), rng5, tol_hours=1)
    assert err == pytest.approx(0.5)  # earlier hour (3) wins the tie


def test_modified_mae_bounded():
    rng = np.random.default_rng(4)
    for _ in range(500):
        preds = [(int(rng.integers(0, 10)), float(rng.normal(0, 50))) for _ in range(rng.integers(0, 4))]
        truth = (int(rng.integers(0, 10)), float(rng.normal(0, 50)))
        vr = sorted(rng.normal(0, 30, size=2))
        err = modified_mae(preds, truth, (vr[0], vr[1]), tol_hours=int(rng.integers(0, 3)))
        assert 0.0 <= err <= 1.0
        naive = naive_modified_mae(preds, truth, (vr[0], vr[1]), 0, MISSING_MAX_ERROR)


def test_modified_mae_matches_naive_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(500):
        tol = int(rng.integers(0, 3))
        policy = MISSING_MAX_ERROR if rng.random() < 0.5 else MISSING_SKIP
        preds = [(int(rng.integers(0, 10)), float(rng.uniform(0, 100))) for _ in range(rng.integers(0, 5))]
        truth = (int(rng.integers(0, 10)), float(rng.uniform(0, 100)))
        vr = (20.0, 80.0)
        got = modified_mae(preds, truth, vr, tol, policy)
        want = naive_modified_mae(preds, truth, vr, tol, policy)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-9)


def test_modified_accuracy_examples_and_naive():
    assert modified_accuracy([], (4, "AFib")) == 0
    assert modified_accuracy([(4, "AFib")], (4, "AFib")) == 1
    assert modified_accuracy([(5, "AFib")], (4, "AFib"), tol_hours=1) == 1
    assert modified_accuracy([(5, "Sinus")], (4, "AFib"), tol_hours=1) == 0
    assert modified_accuracy([], (4, "AFib"), missing_policy=MISSING_SKIP) is None

    rng = np.random.default_rng(6)
    labels = ["a", "b", "c"]
    for _ in range(500):
        tol = int(rng.integers(0, 3))
        policy = MISSING_MAX_ERROR if rng.random() < 0.5 else MISSING_SKIP
        preds = [
            (int(rng.integers(0, 8)), labels[rng.integers(0, 3)]) for _ in range(rng.integers(0, 5))
        ]
        truth = (int(rng.integers(0, 8)), labels[rng.integers(0, 3)])
        assert modified_accuracy(preds, truth, tol, policy) == naive_modified_accuracy(
            preds, truth, tol, policy
        )


# --- token accounting --------------------------------------------------------------------------

def test_token_accounting_and_compression():
    acct = token_accounting(5000, 8)
    assert acct == {"context_tokens": 5000, "input_tokens": 8}
    assert compression_ratio(5000, 8) == 625.0
    with pytest.raises(MetricError):
        compression_ratio(10, 0)


# --- bootstrap ------------------------------------------------------------------------------------

def test_bootstrap_constant_and_single():
    lo, hi = bootstrap_ci([0.7, 0.7, 0.7])
    assert lo == pytest.approx(0.7, abs=1e-9) and hi == pytest.approx(0.7, abs=1e-9)
    assert bootstrap_ci([0.3]) == (0.3, 0.3)


def test_bootstrap_exhaustive_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        scores = [float(rng.uniform(0, 1)) for _ in range(n)]
        got = bootstrap_ci(scores, level=0.95, resamples=10_000)
        want = naive_bootstrap(scores, 0.95, 10_000, seed=0)
        assert got[0] == pytest.approx(want[0], abs=1e-9)
        assert got[1] == pytest.approx(want[1], abs=1e-9)


def test_bootstrap_sampled_matches_protocol_reference():
    scores = list(np.random.default_rng(8).uniform(0, 1, size=12))
    got = bootstrap_ci(scores, resamples=2000, rng=np.random.default_rng(99))
    want = naive_bootstrap(scores, 0.95, 2000, seed=99)
    assert got[0] == pytest.approx(want[0], abs=1e-9)
    assert got[1] == pytest.approx(want[1], abs=1e-9)


def test_bootstrap_deterministic_under_seed():
    scores = list(np.random.default_rng(9).uniform(0, 1, size=20))
    a = bootstrap_ci(scores, resamples=500, rng=np.random.default_rng(1))
    b = bootstrap_ci(scores, resamples=500, rng=np.random.default_rng(1))
    assert a == b


# --- aggregation ------------------------------------------------------------------------------------

def test_score_next_step_and_report():
    stats = NormStats(ranges={KEYS[0]: (0.0, 100.0)})
    truth = TimestepOutput(
        values={KEYS[0]: 40.0, KEYS[1]: "Normal"},
        events=frozenset({KEYS[2]}),
    )
    pred = TimestepOutput(values={KEYS[0]: 50.0, KEYS[1]: "Weak"})
    case = score_next_step(pred, truth, stats)
    report = aggregate_report([case], MISSING_MAX_ERROR)
    assert report.f1_micro == pytest.approx(2 * 2 / (2 * 2 + 0 + 1))
    assert report.mae_micro == pytest.approx(0.1)
    assert report.cat_acc_micro == 0.0
    assert report.value_acc == pytest.approx(0.5)  # numeric within 0.1 counts, cat miss
    assert 0 <= report.f1_macro <= 1


def test_report_serialization_round_trip(tmp_path):
    stats = NormStats(ranges={KEYS[0]: (0.0, 100.0)})
    truth = TimestepOutput(values={KEYS[0]: 40.0})
    case = score_next_step(truth, truth, stats)
    case.context_tokens = 120
    case.input_tokens = 30
    report = aggregate_report([case], MISSING_MAX_ERROR, extras={"accuracy": 1.0})
    doc = report.to_json()
    assert doc["context_tokens"] == [120.0, 120]
    assert "accuracy" in doc["extras"]
    assert "event F1" in report.table()
    report.write_per_feature_csv(tmp_path / "per_feature.csv")
    assert (tmp_path / "per_feature.csv").read_text().startswith("unit,")
