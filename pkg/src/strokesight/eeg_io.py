"""Recording ingestion, cohort manifests, patient-wise splits and the
synthetic cohort generator that stands in for the restricted clinical data.

Container format: `<id>.json` manifest next to `<id>.f32` raw samples
(channel-major, little-endian float32).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .montage import CHANNELS_32, hemisphere_channels

STROKE_TYPES = ("healthy", "ischemic", "hemorrhagic")
SPLITS = ("train", "validation", "test")


class RecordingError(ValueError):
    """Raised when a recording or manifest violates its invariants."""


@dataclass(frozen=True)
class LabelSet:
    stroke_type: str
    lateralization: str | None = None
    severity: str | None = None

    def __post_init__(self):
        if self.stroke_type not in STROKE_TYPES:
            raise RecordingError(f"unknown stroke_type {self.stroke_type!r}")
        if self.stroke_type == "healthy":
            if self.lateralization is not None or self.severity is not None:
                raise RecordingError("healthy recordings carry no lateralization/severity")
        else:
            if self.lateralization not in ("left", "right"):
                raise RecordingError("stroke recordings require lateralization left/right")
            if self.severity not in ("large", "small"):
                raise RecordingError("stroke recordings require severity large/small")

    def to_dict(self) -> dict:
        d = {"stroke_type": self.stroke_type}
        if self.lateralization is not None:
            d["lateralization"] = self.lateralization
        if self.severity is not None:
            d["severity"] = self.severity
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSet":
        return cls(d["stroke_type"], d.get("lateralization"), d.get("severity"))


@dataclass
class Recording:
    patient_id: str
    recording_id: str
    sample_rate_hz: float
    channel_names: list[str]
    samples: np.ndarray          # (channels, time), float32 microvolts
    labels: LabelSet
    channel_subset: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate_hz

    def validate(self) -> "Recording":
        if self.sample_rate_hz <= 0:
            raise RecordingError("sample_rate_hz must be positive")
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channel_names):
            raise RecordingError(
                f"sample matrix {self.samples.shape} does not match "
                f"{len(self.channel_names)} channel names")
        if not self.channel_subset:
            if len(self.channel_names) != 32:
                raise RecordingError(
                    f"expected 32 channels, got {len(self.channel_names)}")
            if set(self.channel_names) != set(CHANNELS_32):
                unknown = sorted(set(self.channel_names) - set(CHANNELS_32))
                raise RecordingError(f"non-canonical channel names: {unknown}")
        if not np.all(np.isfinite(self.samples)):
            raise RecordingError("samples contain non-finite values")
        if self.duration_s < 60.0:
            raise RecordingError(f"duration {self.duration_s:.1f}s < 60s minimum")
        return self


def _normalize_channel_order(rec: Recording) -> Recording:
    """Reorder a full-montage recording into the canonical channel order."""
    if rec.channel_subset or rec.channel_names == CHANNELS_32:
        return rec
    index = {name: i for i, name in enumerate(rec.channel_names)}
    order = [index[name] for name in CHANNELS_32]
    return replace(rec, channel_names=list(CHANNELS_32),
                   samples=np.ascontiguousarray(rec.samples[order]))


def write_recording(rec: Recording, directory: str | Path) -> Path:
    """Write the manifest+binary pair; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = np.ascontiguousarray(rec.samples, dtype="<f4")
    manifest = {
        "patient_id": rec.patient_id,
        "recording_id": rec.recording_id,
        "sample_rate_hz": rec.sample_rate_hz,
        "channel_names": rec.channel_names,
        "n_samples": int(samples.shape[1]),
        "labels": rec.labels.to_dict(),
    }
    if rec.channel_subset:
        manifest["channel_subset"] = True
    path = directory / f"{rec.recording_id}.json"
    path.write_text(json.dumps(manifest, indent=1))
    samples.tofile(directory / f"{rec.recording_id}.f32")
    return path


def load_recording(path: str | Path) -> Recording:
    """Load and validate a recording from its manifest path."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RecordingError(f"malformed manifest {path}: {exc}") from exc
    required = {"patient_id", "recording_id", "sample_rate_hz", "channel_names",
                "n_samples", "labels"}
    missing = required - manifest.keys()
    if missing:
        raise RecordingError(f"manifest missing fields {sorted(missing)}")
    bin_path = path.with_suffix(".f32")
    raw = np.fromfile(bin_path, dtype="<f4")
    n_ch = len(manifest["channel_names"])
    n_samp = int(manifest["n_samples"])
    if raw.size != n_ch * n_samp:
        raise RecordingError(
            f"{bin_path.name}: expected {n_ch}x{n_samp} samples, found {raw.size}")
    rec = Recording(
        patient_id=manifest["patient_id"],
        recording_id=manifest["recording_id"],
        sample_rate_hz=float(manifest["sample_rate_hz"]),
        channel_names=list(manifest["channel_names"]),
        samples=raw.reshape(n_ch, n_samp),
        labels=LabelSet.from_dict(manifest["labels"]),
        channel_subset=bool(manifest.get("channel_subset", False)),
    )
    return _normalize_channel_order(rec.validate())


def subset_channels(rec: Recording, keep: list[str]) -> Recording:
    """Restrict a recording to a channel subset (low-density montage path)."""
    if not keep:
        raise RecordingError("channel subset must be non-empty")
    unknown = [c for c in keep if c not in rec.channel_names]
    if unknown:
        raise RecordingError(f"unknown channel names: {unknown}")
    index = {name: i for i, name in enumerate(rec.channel_names)}
    rows = [index[c] for c in keep]
    return replace(rec, channel_names=list(keep),
                   samples=np.ascontiguousarray(rec.samples[rows]),
                   channel_subset=True)


# ---------------------------------------------------------------------------
# cohort manifest and patient-wise splits


@dataclass
class CohortManifest:
    entries: list[dict]   # {patient_id, recording_ids, split, stroke_type}
    seed: int = 0

    def patients(self, split: str | None = None) -> list[str]:
        return [e["patient_id"] for e in self.entries
                if split is None or e["split"] == split]

    def recording_ids(self, split: str | None = None) -> list[str]:
        out = []
        for e in self.entries:
            if split is None or e["split"] == split:
                out.extend(e["recording_ids"])
        return out

    def validate(self) -> "CohortManifest":
        seen_patients: dict[str, str] = {}
        seen_recordings: set[str] = set()
        for e in self.entries:
            pid = e["patient_id"]
            if pid in seen_patients:
                raise RecordingError(f"patient {pid} appears twice in the manifest")
            seen_patients[pid] = e["split"]
            for rid in e["recording_ids"]:
                if rid in seen_recordings:
                    raise RecordingError(f"recording {rid} assigned to two patients")
                seen_recordings.add(rid)
            if e["split"] not in SPLITS:
                raise RecordingError(f"unknown split {e['split']!r}")
        return self

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(
            {"seed": self.seed, "entries": self.entries}, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "CohortManifest":
        d = json.loads(Path(path).read_text())
        return cls(entries=d["entries"], seed=d.get("seed", 0)).validate()


def make_splits(patients: list[dict], ratios: tuple[float, float, float],
                seed: int) -> CohortManifest:
    """Stratified patient-wise split.

    patients: [{patient_id, recording_ids, stroke_type}].
    Split totals follow the largest-remainder rule on the requested ratios;
    seats are then filled per stroke class so each class stays within one
    patient of its proportional share.
    """
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[dict]] = {}
    for p in patients:
        by_class.setdefault(p["stroke_type"], []).append(p)
    n_splits = sum(1 for r in ratios if r > 0)
    for cls_name, members in by_class.items():
        if len(members) < n_splits:
            raise RecordingError(
                f"class {cls_name!r} has {len(members)} patients, fewer than "
                f"{n_splits} splits: stratification infeasible")

    n_total = len(patients)
    totals = _largest_remainder([n_total * r for r in ratios], n_total)

    # per-class floors, then distribute leftover seats against remaining
    # split capacity, largest fractional share first
    alloc: dict[str, list[int]] = {}
    fractions: list[tuple[float, str, int]] = []
    for cls_name, members in sorted(by_class.items()):
        quota = [len(members) * r for r in ratios]
        floors = [int(q) for q in quota]
        alloc[cls_name] = floors
        for s in range(3):
            fractions.append((quota[s] - floors[s], cls_name, s))
    capacity = [totals[s] - sum(a[s] for a in alloc.values()) for s in range(3)]
    fractions.sort(key=lambda t: (-t[0], t[1], t[2]))
    for _, cls_name, s in fractions:
        need = len(by_class[cls_name]) - sum(alloc[cls_name])
        if need > 0 and capacity[s] > 0:
            alloc[cls_name][s] += 1
            capacity[s] -= 1
    # any still-unplaced patients go wherever capacity remains
    for cls_name, members in sorted(by_class.items()):
        while sum(alloc[cls_name]) < len(members):
            s = int(np.argmax(capacity))
            alloc[cls_name][s] += 1
            capacity[s] -= 1
    # guarantee at least one patient per class per active split
    for cls_name in sorted(alloc):
        for s in range(3):
            if ratios[s] > 0 and alloc[cls_name][s] == 0:
                donor = int(np.argmax(alloc[cls_name]))
                alloc[cls_name][donor] -= 1
                alloc[cls_name][s] += 1

    entries = []
    for cls_name, members in sorted(by_class.items()):
        order = rng.permutation(len(members))
        counts = alloc[cls_name]
        cursor = 0
        for s, split_name in enumerate(SPLITS):
            for i in order[cursor:cursor + counts[s]]:
                p = members[int(i)]
                entries.append({
                    "patient_id": p["patient_id"],
                    "recording_ids": list(p["recording_ids"]),
                    "split": split_name,
                    "stroke_type": cls_name,
                })
            cursor += counts[s]
    entries.sort(key=lambda e: e["patient_id"])
    return CohortManifest(entries=entries, seed=seed).validate()


def _largest_remainder(quota: list[float], total: int) -> list[int]:
    floors = [int(q) for q in quota]
    order = np.argsort([floors[i] - quota[i] for i in range(len(quota))])
    out = list(floors)
    for i in order[:total - sum(floors)]:
        out[int(i)] += 1
    return out


# ---------------------------------------------------------------------------
# synthetic cohort generator


#: Canonical band names mapped to frequency ranges used by the recipes.
RECIPE_BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
}

#: Strong default effect recipes: per-class band power multipliers applied
#: on the lesioned hemisphere. Severity 'small' halves the excess power.
DEFAULT_RECIPES = {
    "healthy": {},
    "ischemic": {"delta": 3.0, "theta": 2.2},
    "hemorrhagic": {"delta": 9.0, "theta": 1.5},
}


@dataclass
class SyntheticCohortSpec:
    n_patients_per_class: dict[str, int]
    sample_rate_hz: float = 256.0
    duration_s: float = 180.0
    effect_recipes: dict[str, dict[str, float]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_RECIPES.items()})
    noise_floor: float = 0.05
    seed: int = 0
    severity_small_scale: float = 0.5
    amplitude_uv: float = 20.0

    def validate(self) -> "SyntheticCohortSpec":
        if self.duration_s < 180.0:
            raise ValueError("duration_s must be >= 180")
        for cls_name, recipe in self.effect_recipes.items():
            if cls_name not in STROKE_TYPES:
                raise ValueError(f"unknown class {cls_name!r} in recipes")
            for band, mult in recipe.items():
                if band not in RECIPE_BANDS:
                    raise ValueError(f"unknown band {band!r} in recipe")
                if mult <= 0:
                    raise ValueError("multipliers must be positive")
        for cls_name, n in self.n_patients_per_class.items():
            if cls_name not in STROKE_TYPES or n < 0:
                raise ValueError(f"bad patient count {cls_name!r}: {n}")
        return self


def _colored_noise(rng: np.random.Generator, n_channels: int, n_samples: int,
                   fs: float, boost: dict[tuple[float, float], float] | None = None,
                   noise_floor: float = 0.05) -> np.ndarray:
    """1/f-shaped Gaussian noise with optional per-band power boosts.

    Channels are normalised by the std of the *unboosted* shaping so a
    boost multiplier M yields band power M times the unboosted baseline.
    """
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    base_shape = 1.0 / np.sqrt(np.maximum(freqs, 0.5))
    base_shape[freqs < 0.1] = 0.0   # no DC drift
    shape = base_shape.copy()
    if boost:
        for (lo, hi), mult in boost.items():
            band = (freqs >= lo) & (freqs < hi)
            shape[band] *= math.sqrt(mult)
    base = np.fft.irfft(spec * base_shape[None, :], n=n_samples, axis=1)
    norm = base.std(axis=1, keepdims=True)
    shaped = np.fft.irfft(spec * shape[None, :], n=n_samples, axis=1) / norm
    return shaped + noise_floor * rng.standard_normal((n_channels, n_samples))


def generate_synthetic_cohort(spec: SyntheticCohortSpec) -> list[Recording]:
    """Deterministic synthetic cohort with class/hemisphere band signatures."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_samples = int(round(spec.duration_s * spec.sample_rate_hz))
    recordings = []
    patient_counter = 0
    for cls_name in STROKE_TYPES:
        n = spec.n_patients_per_class.get(cls_name, 0)
        recipe = spec.effect_recipes.get(cls_name, {})
        for i in range(n):
            patient_counter += 1
            pid = f"P{patient_counter:03d}"
            if cls_name == "healthy":
                labels = LabelSet("healthy")
            else:
                # round-robin over (side, severity) keeps tasks balanced
                side = ("left", "right")[i % 2]
                severity = ("large", "small")[(i // 2) % 2]
                labels = LabelSet(cls_name, side, severity)
            boost = {}
            if labels.stroke_type != "healthy":
                scale = 1.0 if labels.severity == "large" else spec.severity_small_scale
                for band, mult in recipe.items():
                    eff = 1.0 + (mult - 1.0) * scale
                    boost[RECIPE_BANDS[band]] = eff
            lesion = set(hemisphere_channels(labels.lateralization)
                         if labels.lateralization else [])
            lesion_rows = [i for i, c in enumerate(CHANNELS_32) if c in lesion]
            other_rows = [i for i, c in enumerate(CHANNELS_32) if c not in lesion]
            samples = np.empty((32, n_samples), dtype=np.float64)
            samples[other_rows] = _colored_noise(
                rng, len(other_rows), n_samples, spec.sample_rate_hz,
                noise_floor=spec.noise_floor)
            if lesion_rows:
                samples[lesion_rows] = _colored_noise(
                    rng, len(lesion_rows), n_samples, spec.sample_rate_hz,
                    boost=boost, noise_floor=spec.noise_floor)
            samples *= spec.amplitude_uv
            recordings.append(Recording(
                patient_id=pid,
                recording_id=f"{pid}-R1",
                sample_rate_hz=spec.sample_rate_hz,
                channel_names=list(CHANNELS_32),
                samples=samples.astype(np.float32),
                labels=labels,
            ).validate())
    return recordings


def cohort_patients(recordings: list[Recording]) -> list[dict]:
    """Group recordings into the patient entries make_splits expects."""
    by_patient: dict[str, dict] = {}
    for rec in recordings:
        entry = by_patient.setdefault(rec.patient_id, {
            "patient_id": rec.patient_id,
            "recording_ids": [],
            "stroke_type": rec.labels.stroke_type,
        })
        entry["recording_ids"].append(rec.recording_id)
    return [by_patient[k] for k in sorted(by_patient)]
