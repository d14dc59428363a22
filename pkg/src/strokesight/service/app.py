"""HTTP API binding the pipeline: upload, preprocess, predict, topography,
thresholds and evaluation reports.
"""

from __future__ import annotations

import base64

import numpy as np
from fastapi import FastAPI, HTTPException, Query

from .. import dqn, dsp, eeg_io, grutcn, pipeline, topo
from . import schemas
from .state import FeatureSet, SessionState


def create_app(state: SessionState | None = None) -> FastAPI:
    app = FastAPI(title="strokesight", version="0.1.0")
    app.state.session = state or SessionState()

    def session() -> SessionState:
        return app.state.session

    # -- recordings ---------------------------------------------------------

    @app.post("/recordings", response_model=schemas.RecordingCreated, status_code=201)
    def upload_recording(body: schemas.RecordingUpload):
        s = session()
        m = body.manifest
        try:
            raw = base64.b64decode(body.samples_b64, validate=True)
        except Exception as exc:
            raise HTTPException(400, f"invalid base64 samples: {exc}")
        samples = np.frombuffer(raw, dtype="<f4")
        if samples.size != len(m.channel_names) * m.n_samples:
            raise HTTPException(
                400, f"sample payload has {samples.size} values, expected "
                     f"{len(m.channel_names)}x{m.n_samples}")
        try:
            rec = eeg_io.Recording(
                patient_id=m.patient_id,
                recording_id=m.recording_id,
                sample_rate_hz=m.sample_rate_hz,
                channel_names=list(m.channel_names),
                samples=samples.reshape(len(m.channel_names), m.n_samples).copy(),
                labels=eeg_io.LabelSet(m.labels.stroke_type, m.labels.lateralization,
                                       m.labels.severity),
                channel_subset=m.channel_subset,
            ).validate()
        except eeg_io.RecordingError as exc:
            raise HTTPException(400, str(exc))
        s.add_recording(rec)
        return schemas.RecordingCreated(recording_id=rec.recording_id)

    @app.get("/recordings/{recording_id}", response_model=schemas.RecordingSummary)
    def get_recording(recording_id: str):
        rec = session().get_recording(recording_id)
        if rec is None:
            raise HTTPException(404, f"unknown recording {recording_id!r}")
        return schemas.RecordingSummary(
            patient_id=rec.patient_id,
            recording_id=rec.recording_id,
            sample_rate_hz=rec.sample_rate_hz,
            n_channels=len(rec.channel_names),
            n_samples=rec.samples.shape[1],
            duration_s=rec.duration_s,
            labels=schemas.LabelsModel(**rec.labels.to_dict()),
            channel_subset=rec.channel_subset,
        )

    # -- preprocessing ------------------------------------------------------

    @app.post("/preprocess", response_model=schemas.PreprocessResponse)
    def preprocess(body: schemas.PreprocessRequest):
        s = session()
        rec = s.get_recording(body.recording_id)
        if rec is None:
            raise HTTPException(404, f"unknown recording {body.recording_id!r}")
        params = {"high_pass_hz": body.high_pass_hz, "low_pass_hz": body.low_pass_hz,
                  "notch_50hz": body.notch_50hz, "window_s": body.window_s}
        feature_id = s.feature_cache_key(body.recording_id, params)
        cached = feature_id in s.feature_sets
        if not cached:
            try:
                fir = dsp.FirSpec(low_cut_hz=body.high_pass_hz,
                                  high_cut_hz=body.low_pass_hz)
                welch = dsp.WelchConfig(window_len_s=body.window_s)
                fir.validate(rec.sample_rate_hz)
                welch.validate(rec.sample_rate_hz)
            except (dsp.FilterDesignError, ValueError) as exc:
                raise HTTPException(422, str(exc))
            feats = dsp.extract_features(rec, fir, welch, notch=body.notch_50hz)
            s.feature_sets[feature_id] = FeatureSet(
                feature_id=feature_id, recording_id=rec.recording_id,
                features=feats, params=params)
        fs = s.feature_sets[feature_id]
        mean_matrix = np.mean([f.matrix for f in fs.features], axis=0)
        summary = [schemas.BandSummary(
            band=name, mean_power=float(mean_matrix[:, list(idx)].sum(axis=1).mean()))
            for name, idx in dsp.CANONICAL_BANDS.items()]
        return schemas.PreprocessResponse(
            feature_id=feature_id, recording_id=rec.recording_id,
            n_segments=len(fs.features), cached=cached, band_summary=summary)

    # -- prediction -----------------------------------------------------------

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(body: schemas.PredictRequest):
        s = session()
        fs = s.feature_sets.get(body.feature_id)
        if fs is None:
            raise HTTPException(404, f"unknown feature id {body.feature_id!r}")
        snap = s.snapshot
        if snap.bundle is None:
            raise HTTPException(409, "no active model; activate a checkpoint first")
        if body.mode not in ("static", "dqn"):
            raise HTTPException(422, f"unknown mode {body.mode!r}")
        policy = None
        if body.mode == "dqn":
            policy = snap.policy
            if policy is None:
                raise HTTPException(409, "no active threshold policy")
        tasks = []
        thresholds = s.static_tau
        for task in grutcn.TASKS:
            try:
                preds = pipeline.predict_split(
                    snap.bundle, fs.features, task, mode=body.mode,
                    tau=s.static_tau, policy=policy)
            except ValueError:
                continue   # unlabeled task for healthy recordings
            patient = preds.patient_records[0]
            segments = [schemas.SegmentPrediction(
                segment_index=f.segment_index,
                label=r.predicted_label,
                probabilities=[float(v) for v in r.probabilities],
                low_confidence=r.low_confidence,
            ) for f, r in zip(grutcn.task_segments(fs.features, task),
                              preds.segment_records)]
            tasks.append(schemas.TaskPrediction(
                task=task,
                label=patient.predicted_label,
                probabilities=[float(v) for v in patient.probabilities],
                low_confidence=patient.low_confidence,
                segments=segments,
            ))
            if task == "stroke_type" and preds.thresholds is not None:
                thresholds = preds.thresholds
        return schemas.PredictResponse(
            feature_id=body.feature_id, mode=body.mode,
            thresholds=[float(t) for t in thresholds], tasks=tasks)

    # -- topography -----------------------------------------------------------

    @app.get("/topomap", response_model=schemas.TopomapResponse)
    def topomap(feature_id: str = Query(...), band: str = Query("delta"),
                segment: int = Query(0)):
        s = session()
        fs = s.feature_sets.get(feature_id)
        if fs is None:
            raise HTTPException(404, f"unknown feature id {feature_id!r}")
        if not 0 <= segment < len(fs.features):
            raise HTTPException(404, f"no segment {segment}")
        try:
            grid = topo.render_band(fs.features[segment].matrix, band)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        d = grid.to_dict()
        return schemas.TopomapResponse(
            n=d["n"], band=d["band"], extent=d["extent"], values=d["values"],
            electrodes=[schemas.ElectrodePoint(**e) for e in d["electrodes"]])

    # -- thresholds -----------------------------------------------------------

    @app.get("/thresholds", response_model=schemas.ThresholdsModel)
    def get_thresholds():
        return schemas.ThresholdsModel(tau=[float(t) for t in session().static_tau])

    @app.put("/thresholds", response_model=schemas.ThresholdsModel)
    def put_thresholds(body: schemas.ThresholdsUpdate):
        s = session()
        if len(body.tau) != 3:
            raise HTTPException(422, "need exactly 3 thresholds")
        if any(not (dqn.TAU_MIN <= t <= dqn.TAU_MAX) for t in body.tau):
            raise HTTPException(
                422, f"thresholds must lie in [{dqn.TAU_MIN}, {dqn.TAU_MAX}]")
        s.update_static_tau(body.tau, source="api")
        return schemas.ThresholdsModel(tau=[float(t) for t in s.static_tau])

    # -- evaluation report ------------------------------------------------------

    @app.get("/report/{split}")
    def report(split: str, n_boot: int = Query(10_000, ge=10)):
        s = session()
        if split not in eeg_io.SPLITS:
            raise HTTPException(404, f"unknown split {split!r}")
        snap = s.snapshot
        if snap.bundle is None:
            raise HTTPException(409, "no active model")
        if s.manifest is None:
            raise HTTPException(409, "no cohort manifest loaded")
        split_ids = set(s.manifest.recording_ids(split))
        features = {}
        for fs in s.feature_sets.values():
            if fs.recording_id in split_ids:
                features[fs.recording_id] = fs.features
        missing = split_ids - features.keys()
        if missing:
            raise HTTPException(
                409, f"features not computed for recordings: {sorted(missing)}")
        return pipeline.evaluate_split(snap.bundle, features, s.manifest, split,
                                       policy=snap.policy, n_boot=n_boot)

    return app
