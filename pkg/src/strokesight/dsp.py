"""FIR band-pass filtering, fixed-length segmentation, Welch PSD estimation
and sub-band feature construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, filtfilt, iirnotch

from .eeg_io import LabelSet, Recording

#: Default 10-band scheme: two sub-bands per canonical band over 0.5-45 Hz.
DEFAULT_BAND_EDGES = [0.5, 2.0, 4.0, 6.0, 8.0, 10.0, 13.0, 20.0, 30.0, 38.0, 45.0]

#: Canonical band name -> indices of its constituent sub-bands.
CANONICAL_BANDS = {
    "delta": (0, 1),
    "theta": (2, 3),
    "alpha": (4, 5),
    "beta": (6, 7),
    "gamma": (8, 9),
}

SEGMENT_SECONDS = 60.0
RECORD_SECONDS = 180.0


class FilterDesignError(ValueError):
    """Raised when a filter spec is infeasible at the given sample rate."""


@dataclass(frozen=True)
class FirSpec:
    low_cut_hz: float = 0.5
    high_cut_hz: float = 60.0
    transition_width_hz: float = 2.0
    max_passband_ripple: float = 0.01

    def validate(self, sample_rate_hz: float) -> "FirSpec":
        nyq = sample_rate_hz / 2.0
        if not (0 < self.low_cut_hz < self.high_cut_hz < nyq):
            raise FilterDesignError(
                f"need 0 < low ({self.low_cut_hz}) < high ({self.high_cut_hz}) "
                f"< Nyquist ({nyq})")
        if self.transition_width_hz <= 0:
            raise FilterDesignError("transition width must be positive")
        return self


@dataclass(frozen=True)
class WelchConfig:
    window_len_s: float = 4.0
    overlap_fraction: float = 0.5

    def validate(self, sample_rate_hz: float) -> "WelchConfig":
        if not (0 <= self.overlap_fraction < 1):
            raise ValueError("overlap fraction must be in [0, 1)")
        if self.window_len_s * sample_rate_hz < 2:
            raise ValueError("window too short for this sample rate")
        return self


@dataclass
class SpectrumEstimate:
    freqs_hz: np.ndarray
    psd: np.ndarray            # (channels, freqs), one-sided density
    n_windows: int


@dataclass(frozen=True)
class BandScheme:
    edges_hz: tuple = tuple(DEFAULT_BAND_EDGES)

    def __post_init__(self):
        edges = list(self.edges_hz)
        if len(edges) != 11 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("band scheme needs 11 strictly increasing edges")
        if edges[0] != 0.5 or edges[-1] != 45.0:
            raise ValueError("band scheme must cover 0.5-45 Hz")

    @property
    def n_bands(self) -> int:
        return len(self.edges_hz) - 1


@dataclass
class RawSegment:
    patient_id: str
    recording_id: str
    segment_index: int
    sample_rate_hz: float
    samples: np.ndarray        # (channels, time) float64
    labels: LabelSet
    padded_samples: int = 0


@dataclass
class SegmentFeatures:
    patient_id: str
    recording_id: str
    segment_index: int
    matrix: np.ndarray         # (channels, bands)
    labels: LabelSet
    standardized: bool = False

    def validate(self) -> "SegmentFeatures":
        if self.matrix.ndim != 2 or self.matrix.shape[1] != 10:
            raise ValueError(f"feature matrix must be (channels, 10), got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("feature matrix contains non-finite values")
        return self


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    fitted_on: str = "train"

    @classmethod
    def fit(cls, features: list[SegmentFeatures], fitted_on: str = "train") -> "Standardizer":
        if fitted_on != "train":
            raise ValueError("standardizer statistics may only come from the train split")
        stackmat = np.stack([f.matrix for f in features])
        std = stackmat.std(axis=0)
        return cls(mean=stackmat.mean(axis=0), std=np.maximum(std, 1e-8),
                   fitted_on=fitted_on)

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), d["fitted_on"])


# ---------------------------------------------------------------------------
# FIR design and filtering


def _hamming(n: int) -> np.ndarray:
    # explicit 0.54/0.46 form; identical to np.hamming but kept visible
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def _windowed_sinc_lowpass(cutoff_hz: float, n_taps: int, fs: float) -> np.ndarray:
    m = (n_taps - 1) / 2.0
    k = np.arange(n_taps) - m
    h = 2.0 * cutoff_hz / fs * np.sinc(2.0 * cutoff_hz / fs * k)
    return h * _hamming(n_taps)


def design_fir(spec: FirSpec, sample_rate_hz: float) -> np.ndarray:
    """Linear-phase (type I) Hamming-windowed band-pass coefficients.

    The tap count follows the Hamming design rule for the narrowest
    transition the spec implies; the low edge is tightened so near-DC
    content stays in the stopband even for cutoffs below 1 Hz.
    """
    spec.validate(sample_rate_hz)
    transition = min(spec.transition_width_hz,
                     1.6 * spec.low_cut_hz,
                     1.9 * (sample_rate_hz / 2.0 - spec.high_cut_hz))
    if transition <= 0:
        raise FilterDesignError("no room for a transition band at this rate")
    n_taps = int(math.ceil(3.3 * sample_rate_hz / transition))
    if n_taps % 2 == 0:
        n_taps += 1
    coeffs = (_windowed_sinc_lowpass(spec.high_cut_hz, n_taps, sample_rate_hz)
              - _windowed_sinc_lowpass(spec.low_cut_hz, n_taps, sample_rate_hz))
    return coeffs


def frequency_response(coeffs: np.ndarray, freqs_hz: np.ndarray,
                       fs: float) -> np.ndarray:
    """|H(f)| of an FIR filter, evaluated by direct DTFT summation."""
    n = np.arange(len(coeffs))
    phase = np.exp(-2j * np.pi * np.outer(freqs_hz, n) / fs)
    return np.abs(phase @ coeffs)


def filter_signal(rec: Recording, coeffs: np.ndarray) -> Recording:
    """Apply the FIR with group-delay compensation (shift-and-trim).

    Output length equals input length; the number of edge samples whose
    values involve zero-padding is recorded in meta['edge_samples'].
    """
    n = rec.samples.shape[1]
    if len(coeffs) >= n:
        raise ValueError(f"filter ({len(coeffs)} taps) longer than signal ({n})")
    delay = (len(coeffs) - 1) // 2
    full = fftconvolve(rec.samples.astype(np.float64), coeffs[None, :], mode="full")
    out = full[:, delay:delay + n]
    filtered = Recording(
        patient_id=rec.patient_id,
        recording_id=rec.recording_id,
        sample_rate_hz=rec.sample_rate_hz,
        channel_names=list(rec.channel_names),
        samples=out.astype(np.float32),
        labels=rec.labels,
        channel_subset=rec.channel_subset,
        meta=dict(rec.meta, edge_samples=delay),
    )
    return filtered


def notch_50hz(rec: Recording, q: float = 30.0) -> Recording:
    """Optional zero-phase 50 Hz notch (second-order IIR)."""
    b, a = iirnotch(50.0, q, fs=rec.sample_rate_hz)
    out = filtfilt(b, a, rec.samples.astype(np.float64), axis=1)
    return Recording(rec.patient_id, rec.recording_id, rec.sample_rate_hz,
                     list(rec.channel_names), out.astype(np.float32), rec.labels,
                     rec.channel_subset, dict(rec.meta, notch_50hz=True))


# ---------------------------------------------------------------------------
# segmentation


def segment_recording(rec: Recording) -> list[RawSegment]:
    """Pad/truncate to 180 s, then split into three 60 s segments."""
    fs = rec.sample_rate_hz
    n_target = int(round(RECORD_SECONDS * fs))
    n_seg = int(round(SEGMENT_SECONDS * fs))
    n = rec.samples.shape[1]
    if n < n_seg:
        raise ValueError(f"recording shorter than {SEGMENT_SECONDS}s")
    data = rec.samples.astype(np.float64)
    n_padded = 0
    if n > n_target:
        data = data[:, :n_target]
    elif n < n_target:
        n_padded = n_target - n
        data = np.pad(data, ((0, 0), (0, n_padded)))
    segments = []
    for k in range(3):
        chunk = data[:, k * n_seg:(k + 1) * n_seg]
        pad_in_seg = max(0, n_padded - (2 - k) * n_seg)
        segments.append(RawSegment(
            patient_id=rec.patient_id,
            recording_id=rec.recording_id,
            segment_index=k,
            sample_rate_hz=fs,
            samples=chunk,
            labels=rec.labels,
            padded_samples=min(pad_in_seg, n_seg),
        ))
    return segments


# ---------------------------------------------------------------------------
# Welch PSD and band powers


def welch_psd(segment: np.ndarray, cfg: WelchConfig,
              sample_rate_hz: float) -> SpectrumEstimate:
    """One-sided Welch PSD (density scaling: integrated PSD ~ variance).

    Hamming-windowed periodograms averaged over 50%-overlapping windows;
    normalisation is per window energy so Parseval holds up to leakage.
    """
    cfg.validate(sample_rate_hz)
    seg = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    n = seg.shape[1]
    win_len = int(round(cfg.window_len_s * sample_rate_hz))
    if n < win_len:
        raise ValueError(f"segment ({n}) shorter than window ({win_len})")
    hop = int(round(win_len * (1.0 - cfg.overlap_fraction)))
    hop = max(hop, 1)
    n_windows = (n - win_len) // hop + 1
    window = _hamming(win_len)
    scale = 1.0 / (sample_rate_hz * np.sum(window ** 2))
    freqs = np.fft.rfftfreq(win_len, 1.0 / sample_rate_hz)
    acc = np.zeros((seg.shape[0], freqs.size))
    for k in range(n_windows):
        chunk = seg[:, k * hop:k * hop + win_len] * window[None, :]
        spec = np.fft.rfft(chunk, axis=1)
        acc += np.abs(spec) ** 2
    psd = acc * (scale / n_windows)
    psd[:, 1:] *= 2.0
    if win_len % 2 == 0:
        psd[:, -1] /= 2.0
    return SpectrumEstimate(freqs_hz=freqs, psd=psd, n_windows=n_windows)


def band_powers(spectrum: SpectrumEstimate, bands: BandScheme) -> np.ndarray:
    """Trapezoidal integral of the PSD over each sub-band -> (channels, B)."""
    freqs = spectrum.freqs_hz
    edges = np.asarray(bands.edges_hz)
    if edges[0] < freqs[0] or edges[-1] > freqs[-1]:
        raise ValueError("band edges outside the estimated frequency range")
    out = np.empty((spectrum.psd.shape[0], bands.n_bands))
    for b in range(bands.n_bands):
        lo, hi = edges[b], edges[b + 1]
        inner = freqs[(freqs > lo) & (freqs < hi)]
        grid = np.concatenate(([lo], inner, [hi]))
        vals = np.stack([np.interp(grid, freqs, spectrum.psd[ch])
                         for ch in range(spectrum.psd.shape[0])])
        out[:, b] = np.trapezoid(vals, grid, axis=1)
    return out


def featurize(powers: np.ndarray, segment: RawSegment,
              standardizer: Standardizer | None = None) -> SegmentFeatures:
    """log10(1+power) features, optionally standardized with train stats."""
    if np.any(powers < 0):
        raise ValueError("band powers must be non-negative")
    matrix = np.log10(1.0 + powers)
    standardized = False
    if standardizer is not None:
        matrix = standardizer.apply(matrix)
        standardized = True
    return SegmentFeatures(
        patient_id=segment.patient_id,
        recording_id=segment.recording_id,
        segment_index=segment.segment_index,
        matrix=matrix,
        labels=segment.labels,
        standardized=standardized,
    ).validate()


def extract_features(rec: Recording, fir: FirSpec | None = None,
                     welch: WelchConfig | None = None,
                     bands: BandScheme | None = None,
                     standardizer: Standardizer | None = None,
                     notch: bool = False) -> list[SegmentFeatures]:
    """Full per-recording pipeline: filter, segment, PSD, band powers, log."""
    fir = fir or FirSpec()
    welch = welch or WelchConfig()
    bands = bands or BandScheme()
    coeffs = design_fir(fir, rec.sample_rate_hz)
    filtered = filter_signal(rec, coeffs)
    if notch:
        filtered = notch_50hz(filtered)
    feats = []
    for seg in segment_recording(filtered):
        spectrum = welch_psd(seg.samples, welch, seg.sample_rate_hz)
        powers = band_powers(spectrum, bands)
        feats.append(featurize(powers, seg, standardizer))
    return feats


# ---------------------------------------------------------------------------
# feature cache files


def save_features(features: list[SegmentFeatures], path: str | Path,
                  bands: BandScheme, standardizer_id: str = "") -> None:
    doc = {
        "band_edges_hz": list(bands.edges_hz),
        "standardizer_id": standardizer_id,
        "segments": [{
            "patient_id": f.patient_id,
            "recording_id": f.recording_id,
            "segment_index": f.segment_index,
            "matrix": f.matrix.tolist(),
            "labels": f.labels.to_dict(),
            "standardized": f.standardized,
        } for f in features],
    }
    Path(path).write_text(json.dumps(doc))


def load_features(path: str | Path) -> tuple[list[SegmentFeatures], BandScheme, str]:
    doc = json.loads(Path(path).read_text())
    feats = [SegmentFeatures(
        patient_id=s["patient_id"],
        recording_id=s["recording_id"],
        segment_index=s["segment_index"],
        matrix=np.asarray(s["matrix"]),
        labels=LabelSet.from_dict(s["labels"]),
        standardized=s.get("standardized", False),
    ).validate() for s in doc["segments"]]
    return feats, BandScheme(tuple(doc["band_edges_hz"])), doc.get("standardizer_id", "")
