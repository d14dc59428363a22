"""In-memory session state for the single-process service.

Model and policy snapshots are immutable once activated; activation swaps
the snapshot reference atomically so concurrent predictions never see a
mix of old and new parameters.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import dqn, dsp, eeg_io, grutcn

STATIC_TAU_DEFAULT = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class Snapshot:
    """Immutable model/policy pair active for predictions."""
    bundle: dict | None = None
    policy: dqn.ThresholdPolicy | None = None
    version: int = 0


@dataclass
class FeatureSet:
    feature_id: str
    recording_id: str
    features: list[dsp.SegmentFeatures]
    params: dict


class SessionState:
    def __init__(self, data_dir: str | Path | None = None):
        self.data_dir = Path(data_dir) if data_dir else None
        self.recordings: dict[str, eeg_io.Recording] = {}
        self.feature_sets: dict[str, FeatureSet] = {}
        self.static_tau = np.array(STATIC_TAU_DEFAULT)
        self.threshold_audit: list[dict] = []
        self.manifest: eeg_io.CohortManifest | None = None
        self._snapshot = Snapshot()
        self._lock = threading.Lock()

    # -- snapshot handling -------------------------------------------------

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def activate(self, bundle=None, policy=None) -> Snapshot:
        with self._lock:
            current = self._snapshot
            snap = Snapshot(
                bundle=bundle if bundle is not None else current.bundle,
                policy=policy if policy is not None else current.policy,
                version=current.version + 1,
            )
            self._snapshot = snap
            return snap

    # -- resources ----------------------------------------------------------

    def add_recording(self, rec: eeg_io.Recording) -> None:
        self.recordings[rec.recording_id] = rec

    def get_recording(self, recording_id: str) -> eeg_io.Recording | None:
        return self.recordings.get(recording_id)

    def feature_cache_key(self, recording_id: str, params: dict) -> str:
        blob = json.dumps({"recording_id": recording_id, **params}, sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:16]

    def update_static_tau(self, tau, source: str) -> None:
        self.threshold_audit.append({
            "tau_before": self.static_tau.tolist(),
            "tau_after": list(tau),
            "source": source,
        })
        self.static_tau = np.asarray(tau, dtype=np.float64)

    # -- startup loading ----------------------------------------------------

    def load_data_dir(self) -> int:
        """Load recordings (and manifest when present) from data_dir."""
        if self.data_dir is None or not self.data_dir.exists():
            return 0
        count = 0
        cohort = self.data_dir / "cohort.json"
        if cohort.exists():
            self.manifest = eeg_io.CohortManifest.load(cohort)
        for manifest_path in sorted(self.data_dir.glob("*.json")):
            if manifest_path.name in ("cohort.json", "standardizer.json"):
                continue
            if manifest_path.name.endswith(".feat.json"):
                continue
            if not manifest_path.with_suffix(".f32").exists():
                continue
            self.add_recording(eeg_io.load_recording(manifest_path))
            count += 1
        return count

    def load_model(self, path: str | Path) -> None:
        bundle, _ = grutcn.load_checkpoint(path)
        self.activate(bundle=bundle)

    def load_policy(self, path: str | Path) -> None:
        self.activate(policy=dqn.ThresholdPolicy.load(path))
