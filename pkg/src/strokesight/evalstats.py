"""Diagnostic-accuracy metrics and inference.

Macro/micro F1, rank-based ROC AUC, patient-level bootstrap CIs, McNemar,
DeLong, expected calibration error and Benjamini-Hochberg FDR control.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps


@dataclass
class PredictionRecord:
    patient_id: str
    true_label: str
    predicted_label: str
    probabilities: np.ndarray
    low_confidence: bool = False

    @property
    def correct(self) -> bool:
        return self.true_label == self.predicted_label

    @property
    def confidence(self) -> float:
        return float(np.max(self.probabilities))


@dataclass
class CalibrationReport:
    n_bins: int
    bin_counts: np.ndarray
    bin_accuracy: np.ndarray
    bin_confidence: np.ndarray
    ece: float


@dataclass
class MetricWithCI:
    value: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return {"value": self.value, "ci95": [self.ci_low, self.ci_high]}


@dataclass
class TaskReport:
    task: str
    accuracy: MetricWithCI
    macro_f1: MetricWithCI
    per_class_f1: dict[str, float]
    macro_auc: MetricWithCI | None
    micro_auc: MetricWithCI | None
    ece: float
    n_patients: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "accuracy": self.accuracy.to_dict(),
            "macro_f1": self.macro_f1.to_dict(),
            "per_class_f1": self.per_class_f1,
            "macro_auc": self.macro_auc.to_dict() if self.macro_auc else None,
            "micro_auc": self.micro_auc.to_dict() if self.micro_auc else None,
            "ece": self.ece,
            "n_patients": self.n_patients,
            **self.extras,
        }


# ---------------------------------------------------------------------------
# point metrics


def accuracy(records: list[PredictionRecord]) -> float:
    if not records:
        raise ValueError("no records")
    return float(np.mean([r.correct for r in records]))


def per_class_f1(records: list[PredictionRecord]) -> dict[str, float]:
    """F1 per class over classes present in truth or prediction."""
    if not records:
        raise ValueError("no records")
    classes = sorted({r.true_label for r in records} | {r.predicted_label for r in records})
    out = {}
    for c in classes:
        tp = sum(1 for r in records if r.true_label == c and r.predicted_label == c)
        fp = sum(1 for r in records if r.true_label != c and r.predicted_label == c)
        fn = sum(1 for r in records if r.true_label == c and r.predicted_label != c)
        denom = 2 * tp + fp + fn
        out[c] = 2 * tp / denom if denom else 0.0
    return out


def macro_f1(records: list[PredictionRecord]) -> float:
    """Unweighted mean of per-class F1 over classes seen in the data."""
    f1s = per_class_f1(records)
    if len(f1s) == 1:
        warnings.warn("macro-F1 over a single class is degenerate", stacklevel=2)
    return float(np.mean(list(f1s.values())))


# ---------------------------------------------------------------------------
# ROC AUC (rank statistic with midranks)


def _midranks(x: np.ndarray) -> np.ndarray:
    return sps.rankdata(x, method="average")


def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    m = int(pos.sum())
    n = len(labels) - m
    if m == 0 or n == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - m * (m + 1) / 2.0) / (m * n))


def roc_auc(scores: np.ndarray, labels: np.ndarray,
            aggregation: str = "binary") -> float:
    """AUC via the Mann-Whitney rank statistic (ties get midranks).

    'binary': scores (n,), labels in {0,1}.
    'ovr_macro'/'ovr_micro': scores (n, C), labels are class indices.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if aggregation == "binary":
        return _binary_auc(scores, labels.astype(int))
    if scores.ndim != 2:
        raise ValueError("one-vs-rest aggregation needs (n, C) scores")
    n_classes = scores.shape[1]
    if aggregation == "ovr_macro":
        aucs = [_binary_auc(scores[:, c], (labels == c).astype(int))
                for c in range(n_classes)]
        return float(np.mean(aucs))
    if aggregation == "ovr_micro":
        flat_scores = scores.ravel(order="F")
        flat_labels = np.concatenate([(labels == c).astype(int)
                                      for c in range(n_classes)])
        return _binary_auc(flat_scores, flat_labels)
    raise ValueError(f"unknown aggregation {aggregation!r}")


# ---------------------------------------------------------------------------
# patient-level bootstrap


def bootstrap_ci(records: list[PredictionRecord], metric_fn,
                 n_resamples: int = 10_000, seed: int = 0,
                 max_redraw_factor: int = 10) -> tuple[float, float, int]:
    """Percentile CI from patient-level resampling.

    Patients (not segments) are drawn with replacement; resamples where
    the metric is undefined are redrawn and counted. Returns
    (lo, hi, n_degenerate).
    """
    by_patient: dict[str, list[PredictionRecord]] = {}
    for r in records:
        by_patient.setdefault(r.patient_id, []).append(r)
    patient_ids = sorted(by_patient)
    if len(patient_ids) < 2:
        # resampling a singleton cohort is a zero-width interval
        value = metric_fn(records)
        return value, value, 0
    rng = np.random.default_rng(seed)
    values = np.empty(n_resamples)
    n_degenerate = 0
    budget = n_resamples * max_redraw_factor
    i = 0
    while i < n_resamples:
        if budget <= 0:
            raise ValueError("all bootstrap resamples degenerate")
        budget -= 1
        draw = rng.integers(0, len(patient_ids), size=len(patient_ids))
        sample: list[PredictionRecord] = []
        for j in draw:
            sample.extend(by_patient[patient_ids[j]])
        try:
            v = metric_fn(sample)
        except ValueError:
            n_degenerate += 1
            continue
        if not np.isfinite(v):
            n_degenerate += 1
            continue
        values[i] = v
        i += 1
    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi), n_degenerate


# ---------------------------------------------------------------------------
# paired tests


def mcnemar(pairs: list[tuple[bool, bool]]) -> tuple[float, dict]:
    """Two-sided McNemar test on paired correctness.

    Exact binomial on the discordant counts when b+c < 25, chi-square
    with continuity correction otherwise. Returns (p, detail).
    """
    b = sum(1 for a_ok, b_ok in pairs if a_ok and not b_ok)
    c = sum(1 for a_ok, b_ok in pairs if b_ok and not a_ok)
    detail = {"b": b, "c": c}
    n = b + c
    if n == 0:
        detail["note"] = "no discordant pairs"
        return 1.0, detail
    if n < 25:
        k = min(b, c)
        p = 2.0 * float(sps.binom.cdf(k, n, 0.5))
        detail["method"] = "exact"
        return min(p, 1.0), detail
    chi2 = (abs(b - c) - 1.0) ** 2 / n
    detail["method"] = "chi2_cc"
    detail["chi2"] = chi2
    return float(sps.chi2.sf(chi2, df=1)), detail


def _delong_components(scores: np.ndarray, labels: np.ndarray):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("DeLong needs both classes present")
    # psi(x, y): 1 if x > y, 0.5 if tied, 0 otherwise
    cmp = (pos[:, None] > neg[None, :]).astype(np.float64)
    cmp += 0.5 * (pos[:, None] == neg[None, :])
    v10 = cmp.mean(axis=1)   # per-positive structural components
    v01 = cmp.mean(axis=0)   # per-negative structural components
    return float(cmp.mean()), v10, v01


def delong(scores_a: np.ndarray, scores_b: np.ndarray,
           labels: np.ndarray) -> tuple[float, float, dict]:
    """DeLong comparison of two correlated AUCs on the same samples.

    Returns (delta_auc, p_value, detail with both AUCs and the variance).
    """
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores_a.shape != scores_b.shape or scores_a.shape[0] != labels.shape[0]:
        raise ValueError("paired scores must align with labels")
    if np.ptp(scores_a) == 0 or np.ptp(scores_b) == 0:
        raise ValueError("degenerate scores: all values tied within a model")
    auc_a, v10_a, v01_a = _delong_components(scores_a, labels)
    auc_b, v10_b, v01_b = _delong_components(scores_b, labels)
    m, n = len(v10_a), len(v01_a)
    s10 = np.cov(np.stack([v10_a, v10_b]), ddof=1) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.stack([v01_a, v01_b]), ddof=1) if n > 1 else np.zeros((2, 2))
    var = ((s10[0, 0] + s10[1, 1] - 2 * s10[0, 1]) / m
           + (s01[0, 0] + s01[1, 1] - 2 * s01[0, 1]) / n)
    delta = auc_a - auc_b
    detail = {"auc_a": auc_a, "auc_b": auc_b, "var": var}
    if var <= 0:
        p = 1.0 if delta == 0 else 0.0
        detail["note"] = "zero variance"
        return delta, p, detail
    z = delta / np.sqrt(var)
    detail["z"] = float(z)
    return delta, float(2.0 * sps.norm.sf(abs(z))), detail


# ---------------------------------------------------------------------------
# calibration


def ece(records: list[PredictionRecord], n_bins: int = 15) -> CalibrationReport:
    """Expected calibration error over equal-width, right-closed bins."""
    if not records:
        raise ValueError("no records")
    conf = np.array([r.confidence for r in records])
    correct = np.array([r.correct for r in records], dtype=np.float64)
    # right-closed bins ((m-1)/M, m/M]; confidence 0 lands in bin 0
    idx = np.ceil(conf * n_bins).astype(int) - 1
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.zeros(n_bins)
    acc = np.zeros(n_bins)
    avg_conf = np.zeros(n_bins)
    for m in range(n_bins):
        mask = idx == m
        counts[m] = mask.sum()
        if counts[m]:
            acc[m] = correct[mask].mean()
            avg_conf[m] = conf[mask].mean()
    n = len(records)
    value = float(np.sum(counts / n * np.abs(acc - avg_conf)))
    return CalibrationReport(n_bins=n_bins, bin_counts=counts,
                             bin_accuracy=acc, bin_confidence=avg_conf, ece=value)


# ---------------------------------------------------------------------------
# multiple comparisons


def benjamini_hochberg(p_values: list[float], fdr: float = 0.05
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Step-up FDR control; returns (q_values, reject mask) in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    n = len(p)
    order = np.argsort(p, kind="stable")
    q_sorted = p[order] * n / np.arange(1, n + 1)
    q_sorted = np.minimum.accumulate(q_sorted[::-1])[::-1]
    q = np.empty(n)
    q[order] = np.minimum(q_sorted, 1.0)
    return q, q <= fdr
