"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class LabelsModel(BaseModel):
    stroke_type: str
    lateralization: str | None = None
    severity: str | None = None


class RecordingManifest(BaseModel):
    patient_id: str
    recording_id: str
    sample_rate_hz: float
    channel_names: list[str]
    n_samples: int
    labels: LabelsModel
    channel_subset: bool = False


class RecordingUpload(BaseModel):
    manifest: RecordingManifest
    samples_b64: str = Field(description="little-endian float32, channel-major")


class RecordingCreated(BaseModel):
    recording_id: str


class RecordingSummary(BaseModel):
    patient_id: str
    recording_id: str
    sample_rate_hz: float
    n_channels: int
    n_samples: int
    duration_s: float
    labels: LabelsModel
    channel_subset: bool


class PreprocessRequest(BaseModel):
    recording_id: str
    high_pass_hz: float = 0.5
    low_pass_hz: float = 60.0
    notch_50hz: bool = True
    window_s: float = 4.0


class BandSummary(BaseModel):
    band: str
    mean_power: float


class PreprocessResponse(BaseModel):
    feature_id: str
    recording_id: str
    n_segments: int
    cached: bool
    band_summary: list[BandSummary]


class PredictRequest(BaseModel):
    feature_id: str
    mode: str = "static"     # static | dqn


class SegmentPrediction(BaseModel):
    segment_index: int
    label: str
    probabilities: list[float]
    low_confidence: bool


class TaskPrediction(BaseModel):
    task: str
    label: str
    probabilities: list[float]
    low_confidence: bool
    segments: list[SegmentPrediction]


class PredictResponse(BaseModel):
    feature_id: str
    mode: str
    thresholds: list[float]
    tasks: list[TaskPrediction]


class ThresholdsModel(BaseModel):
    tau: list[float]
    mode_default: str = "static"


class ThresholdsUpdate(BaseModel):
    tau: list[float]


class ElectrodePoint(BaseModel):
    name: str
    x: float
    y: float
    value: float


class TopomapResponse(BaseModel):
    n: int
    band: str
    extent: float
    values: list[list[float | None]]
    electrodes: list[ElectrodePoint]


class ErrorBody(BaseModel):
    detail: str
