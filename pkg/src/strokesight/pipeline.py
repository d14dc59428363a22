"""End-to-end batch workflows: synthesize, preprocess, train, adapt
thresholds, evaluate. The CLI and HTTP service are thin layers over these.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dqn, dsp, eeg_io, grutcn
from .evalstats import (PredictionRecord, accuracy, benjamini_hochberg,
                        bootstrap_ci, delong, ece, macro_f1, mcnemar,
                        per_class_f1, roc_auc, MetricWithCI, TaskReport)

STATIC_TAU = np.array([0.5, 0.5, 0.5])


# ---------------------------------------------------------------------------
# synthesize


def synthesize_cohort(out_dir: str | Path, spec: eeg_io.SyntheticCohortSpec,
                      ratios: tuple[float, float, float] = (2 / 3, 1 / 6, 1 / 6)
                      ) -> eeg_io.CohortManifest:
    """Generate recordings, write them, and split patient-wise."""
    out_dir = Path(out_dir)
    recordings = eeg_io.generate_synthetic_cohort(spec)
    for rec in recordings:
        eeg_io.write_recording(rec, out_dir)
    manifest = eeg_io.make_splits(eeg_io.cohort_patients(recordings),
                                  ratios, spec.seed)
    manifest.save(out_dir / "cohort.json")
    return manifest


# ---------------------------------------------------------------------------
# preprocess


def preprocess_cohort(data_dir: str | Path, out_dir: str | Path,
                      fir: dsp.FirSpec | None = None,
                      welch: dsp.WelchConfig | None = None,
                      bands: dsp.BandScheme | None = None,
                      notch: bool = False) -> dict[str, list[dsp.SegmentFeatures]]:
    """Filter + featurize every recording; standardize with train stats.

    Writes one `<recording>.feat.json` per recording plus
    `standardizer.json`; returns features keyed by recording id.
    """
    data_dir = Path(data_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bands = bands or dsp.BandScheme()
    manifest = eeg_io.CohortManifest.load(data_dir / "cohort.json")
    split_of = {rid: e["split"] for e in manifest.entries
                for rid in e["recording_ids"]}

    raw: dict[str, list[dsp.SegmentFeatures]] = {}
    for rid in manifest.recording_ids():
        rec = eeg_io.load_recording(data_dir / f"{rid}.json")
        raw[rid] = dsp.extract_features(rec, fir, welch, bands, None, notch)

    train_feats = [f for rid, feats in raw.items() if split_of[rid] == "train"
                   for f in feats]
    standardizer = dsp.Standardizer.fit(train_feats)
    (out_dir / "standardizer.json").write_text(json.dumps(standardizer.to_dict()))

    features: dict[str, list[dsp.SegmentFeatures]] = {}
    for rid, feats in raw.items():
        std = [dsp.SegmentFeatures(
            patient_id=f.patient_id, recording_id=f.recording_id,
            segment_index=f.segment_index,
            matrix=standardizer.apply(f.matrix),
            labels=f.labels, standardized=True).validate() for f in feats]
        features[rid] = std
        dsp.save_features(std, out_dir / f"{rid}.feat.json", bands, "train")
    return features


def load_cohort_features(feature_dir: str | Path,
                         manifest: eeg_io.CohortManifest
                         ) -> dict[str, list[dsp.SegmentFeatures]]:
    feature_dir = Path(feature_dir)
    out = {}
    for rid in manifest.recording_ids():
        feats, _, _ = dsp.load_features(feature_dir / f"{rid}.feat.json")
        out[rid] = feats
    return out


def split_segments(features: dict[str, list[dsp.SegmentFeatures]],
                   manifest: eeg_io.CohortManifest, split: str
                   ) -> list[dsp.SegmentFeatures]:
    out = []
    for rid in manifest.recording_ids(split):
        out.extend(features[rid])
    return out


# ---------------------------------------------------------------------------
# train


def train_models(features: dict[str, list[dsp.SegmentFeatures]],
                 manifest: eeg_io.CohortManifest,
                 cfg: grutcn.TrainConfig | None = None,
                 out_dir: str | Path | None = None
                 ) -> tuple[dict[str, dict[str, np.ndarray]], dict[str, grutcn.TrainHistory]]:
    """Train the three independent task models; optionally write artifacts."""
    cfg = cfg or grutcn.TrainConfig()
    train = split_segments(features, manifest, "train")
    val = split_segments(features, manifest, "validation")
    bundles = {}
    histories = {}
    for task in grutcn.TASKS:
        params, history = grutcn.train_task(task, train, val, cfg)
        bundles[task] = params
        histories[task] = history
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {task: {"best_epoch": h.best_epoch,
                       "best_val_macro_f1": h.best_val_macro_f1,
                       "epochs_run": len(h.rows), "seed": cfg.seed}
                for task, h in histories.items()}
        grutcn.save_checkpoint(bundles, out_dir / "model", metadata=meta)
        for task, h in histories.items():
            h.to_csv(out_dir / f"history_{task}.csv")
    return bundles, histories


# ---------------------------------------------------------------------------
# model outputs -> agent streams and prediction records


def observation_stream(bundle: dict[str, dict[str, np.ndarray]],
                       segments: list[dsp.SegmentFeatures]
                       ) -> list[dqn.AgentObservation]:
    """Stroke-type model outputs as DQN observations, stream-ordered."""
    if not segments:
        return []
    x = np.stack([f.matrix for f in segments])
    emb, probs = grutcn.forward(x, bundle["stroke_type"], "stroke_type")
    classes = grutcn.TASK_CLASSES["stroke_type"]
    return [dqn.AgentObservation(embedding=emb[i], probs=probs[i],
                                 label=classes.index(segments[i].labels.stroke_type))
            for i in range(len(segments))]


@dataclass
class SplitPredictions:
    """Segment and patient-level predictions for one split and mode."""
    task: str
    mode: str
    segment_records: list[PredictionRecord]
    patient_records: list[PredictionRecord]
    thresholds: np.ndarray | None = None


def predict_split(bundle, segments: list[dsp.SegmentFeatures], task: str,
                  mode: str = "static", tau: np.ndarray | None = None,
                  policy: dqn.ThresholdPolicy | None = None) -> SplitPredictions:
    """Predict one task over a segment stream; stroke-type honours thresholds."""
    segs = grutcn.task_segments(segments, task)
    if not segs:
        raise ValueError(f"no labelled segments for task {task!r}")
    x = np.stack([f.matrix for f in segs])
    _, probs = grutcn.forward(x, bundle[task], task)
    classes = grutcn.TASK_CLASSES[task]
    thresholds = None
    low_conf = [False] * len(segs)
    if task == "stroke_type":
        if mode == "dqn":
            if policy is None:
                raise ValueError("dqn mode requires a threshold policy")
            emb, _ = grutcn.forward(x, bundle[task], task)
            stream = [dqn.AgentObservation(embedding=emb[i], probs=probs[i])
                      for i in range(len(segs))]
            result = dqn.evaluate_policy(policy, stream)
            labels = [classes[i] for i, _ in result.decisions]
            low_conf = [flag for _, flag in result.decisions]
            thresholds = result.final_tau
        else:
            tau = STATIC_TAU if tau is None else np.asarray(tau)
            decided = [dqn.decide(p, tau) for p in probs]
            labels = [classes[i] for i, _ in decided]
            low_conf = [flag for _, flag in decided]
            thresholds = tau
        prob_vectors = [probs[i] for i in range(len(segs))]
    else:
        labels = grutcn.probs_to_labels(probs, task)
        prob_vectors = [np.array([1.0 - p[0], p[0]]) for p in probs]

    seg_records = [PredictionRecord(
        patient_id=f.patient_id,
        true_label=getattr(f.labels, task),
        predicted_label=lab,
        probabilities=vec,
        low_confidence=flag,
    ) for f, lab, vec, flag in zip(segs, labels, prob_vectors, low_conf)]

    patient_records = []
    by_patient: dict[str, list[PredictionRecord]] = {}
    for r in seg_records:
        by_patient.setdefault(r.patient_id, []).append(r)
    for pid in sorted(by_patient):
        rs = by_patient[pid]
        label, mean_probs = grutcn.predict_patient(
            [r.predicted_label for r in rs],
            [r.probabilities for r in rs], tuple(classes))
        patient_records.append(PredictionRecord(
            patient_id=pid,
            true_label=rs[0].true_label,
            predicted_label=label,
            probabilities=mean_probs,
            low_confidence=any(r.low_confidence for r in rs),
        ))
    return SplitPredictions(task=task, mode=mode, segment_records=seg_records,
                            patient_records=patient_records, thresholds=thresholds)


# ---------------------------------------------------------------------------
# evaluation report


def _task_report(preds: SplitPredictions, n_boot: int, seed: int) -> TaskReport:
    records = preds.patient_records
    classes = grutcn.TASK_CLASSES[preds.task]
    acc = accuracy(records)
    acc_lo, acc_hi, _ = bootstrap_ci(records, accuracy, n_boot, seed)
    f1 = macro_f1(records)
    f1_lo, f1_hi, _ = bootstrap_ci(records, macro_f1, n_boot, seed + 1)

    truth = np.array([classes.index(r.true_label) for r in records])
    scores = np.stack([r.probabilities for r in records])
    macro_auc = micro_auc = None
    try:
        if preds.task == "stroke_type":
            macro_point = roc_auc(scores, truth, "ovr_macro")
            micro_point = roc_auc(scores, truth, "ovr_micro")
        else:
            macro_point = roc_auc(scores[:, 1], (truth == 1).astype(int), "binary")
            micro_point = macro_point

        def auc_metric(rs, agg):
            t = np.array([classes.index(r.true_label) for r in rs])
            s = np.stack([r.probabilities for r in rs])
            if preds.task == "stroke_type":
                return roc_auc(s, t, agg)
            return roc_auc(s[:, 1], (t == 1).astype(int), "binary")

        mac_lo, mac_hi, _ = bootstrap_ci(records, lambda rs: auc_metric(rs, "ovr_macro"),
                                         n_boot, seed + 2)
        mic_lo, mic_hi, _ = bootstrap_ci(records, lambda rs: auc_metric(rs, "ovr_micro"),
                                         n_boot, seed + 3)
        macro_auc = MetricWithCI(macro_point, mac_lo, mac_hi)
        micro_auc = MetricWithCI(micro_point, mic_lo, mic_hi)
    except ValueError:
        pass   # single-class split: AUC undefined
    cal = ece(records)
    return TaskReport(
        task=preds.task,
        accuracy=MetricWithCI(acc, acc_lo, acc_hi),
        macro_f1=MetricWithCI(f1, f1_lo, f1_hi),
        per_class_f1=per_class_f1(records),
        macro_auc=macro_auc,
        micro_auc=micro_auc,
        ece=cal.ece,
        n_patients=len(records),
    )


def evaluate_split(bundle, features: dict[str, list[dsp.SegmentFeatures]],
                   manifest: eeg_io.CohortManifest, split: str,
                   policy: dqn.ThresholdPolicy | None = None,
                   n_boot: int = 10_000, seed: int = 0) -> dict:
    """Full evaluation report for one split: all tasks, static vs DQN."""
    segments = split_segments(features, manifest, split)
    report: dict = {"split": split, "primary_endpoint": "stroke_type macro-F1",
                    "tasks": {}, "paired": {}}
    static_preds = {}
    for task in grutcn.TASKS:
        preds = predict_split(bundle, segments, task, mode="static")
        static_preds[task] = preds
        report["tasks"][task] = {"static": _task_report(preds, n_boot, seed).to_dict()}

    p_values: list[tuple[str, float]] = []
    if policy is not None:
        dqn_preds = predict_split(bundle, segments, "stroke_type",
                                  mode="dqn", policy=policy)
        report["tasks"]["stroke_type"]["dqn"] = _task_report(
            dqn_preds, n_boot, seed + 10).to_dict()
        static_records = {r.patient_id: r
                          for r in static_preds["stroke_type"].patient_records}
        pairs = [(static_records[r.patient_id].correct, r.correct)
                 for r in dqn_preds.patient_records]
        mc_p, mc_detail = mcnemar(pairs)
        classes = grutcn.TASK_CLASSES["stroke_type"]
        truth = np.array([classes.index(r.true_label)
                          for r in dqn_preds.patient_records])
        s_static = np.stack([static_records[r.patient_id].probabilities
                             for r in dqn_preds.patient_records])
        s_dqn = np.stack([r.probabilities for r in dqn_preds.patient_records])
        delta_f1 = (report["tasks"]["stroke_type"]["dqn"]["macro_f1"]["value"]
                    - report["tasks"]["stroke_type"]["static"]["macro_f1"]["value"])
        report["paired"]["mcnemar"] = {"p": mc_p, **mc_detail}
        report["paired"]["delta_macro_f1_pp"] = 100.0 * delta_f1
        p_values.append(("mcnemar_static_vs_dqn", mc_p))
        # threshold adaptation leaves probabilities untouched, so the
        # per-class DeLong comparison is 0 by construction; reported for
        # protocol completeness
        report["paired"]["delong"] = {}
        for c, cls_name in enumerate(classes):
            try:
                dl_delta, dl_p, _ = delong(s_dqn[:, c], s_static[:, c],
                                           (truth == c).astype(int))
                report["paired"]["delong"][cls_name] = {"delta_auc": dl_delta,
                                                        "p": dl_p}
                p_values.append((f"delong_{cls_name}", dl_p))
            except ValueError as exc:
                report["paired"]["delong"][cls_name] = {"error": str(exc)}
    if p_values:
        qs, rejected = benjamini_hochberg([p for _, p in p_values])
        report["paired"]["fdr"] = {
            name: {"p": p, "q": float(q), "rejected_at_5pct": bool(rej)}
            for (name, p), q, rej in zip(p_values, qs, rejected)}
    return report
