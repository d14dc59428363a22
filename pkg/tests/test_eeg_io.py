import numpy as np
import pytest

from strokesight import eeg_io
from strokesight.montage import CHANNELS_32


def _recording(seed=0, n_seconds=180, fs=128.0, n_channels=32):
    rng = np.random.default_rng(seed)
    samples = rng.normal(0, 10, size=(n_channels, int(n_seconds * fs))).astype(np.float32)
    return eeg_io.Recording(
        patient_id="P001", recording_id="P001-R1", sample_rate_hz=fs,
        channel_names=list(CHANNELS_32[:n_channels]), samples=samples,
        labels=eeg_io.LabelSet("hemorrhagic", "left", "large"),
    )


class TestLabelSet:
    def test_healthy_has_no_extras(self):
        with pytest.raises(eeg_io.RecordingError):
            eeg_io.LabelSet("healthy", lateralization="left")

    def test_stroke_requires_extras(self):
        with pytest.raises(eeg_io.RecordingError):
            eeg_io.LabelSet("ischemic")
        eeg_io.LabelSet("ischemic", "right", "small")


class TestContainerRoundTrip:
    def test_round_trip_bit_exact(self, tmp_path):
        rec = _recording()
        path = eeg_io.write_recording(rec, tmp_path)
        loaded = eeg_io.load_recording(path)
        np.testing.assert_array_equal(loaded.samples, rec.samples)
        assert loaded.channel_names == rec.channel_names
        assert loaded.labels == rec.labels

    def test_channel_count_mismatch(self, tmp_path):
        rec = _recording(n_channels=31)
        rec.channel_subset = True   # allow writing
        path = eeg_io.write_recording(rec, tmp_path)
        manifest = path.read_text().replace('"channel_subset": true', '"channel_subset": false')
        path.write_text(manifest)
        with pytest.raises(eeg_io.RecordingError, match="32 channels"):
            eeg_io.load_recording(path)

    def test_nan_sample_rejected(self, tmp_path):
        rec = _recording()
        rec.samples[5, 100] = np.nan
        path = eeg_io.write_recording(rec, tmp_path)
        with pytest.raises(eeg_io.RecordingError, match="non-finite"):
            eeg_io.load_recording(path)

    def test_short_recording_rejected(self, tmp_path):
        rec = _recording(n_seconds=30)
        path = eeg_io.write_recording(rec, tmp_path)
        with pytest.raises(eeg_io.RecordingError, match="60s"):
            eeg_io.load_recording(path)

    def test_channel_order_normalized(self, tmp_path):
        rec = _recording()
        perm = np.random.default_rng(1).permutation(32)
        shuffled = eeg_io.Recording(
            rec.patient_id, rec.recording_id, rec.sample_rate_hz,
            [rec.channel_names[i] for i in perm], rec.samples[perm], rec.labels)
        path = eeg_io.write_recording(shuffled, tmp_path)
        loaded = eeg_io.load_recording(path)
        assert loaded.channel_names == list(CHANNELS_32)
        np.testing.assert_array_equal(loaded.samples, rec.samples)


class TestSubsetChannels:
    def test_full_subset_is_identity_modulo_flag(self):
        rec = _recording()
        sub = eeg_io.subset_channels(rec, list(CHANNELS_32))
        assert sub.channel_subset
        np.testing.assert_array_equal(sub.samples, rec.samples)

    def test_eight_channel_subset(self):
        keep = ["Fp1", "Fp2", "C3", "C4", "O1", "O2", "T7", "T8"]
        sub = eeg_io.subset_channels(_recording(), keep)
        assert sub.channel_names == keep
        assert sub.samples.shape[0] == 8

    def test_unknown_channel(self):
        with pytest.raises(eeg_io.RecordingError, match="unknown"):
            eeg_io.subset_channels(_recording(), ["XX"])


def _patients(counts: dict[str, int]):
    out = []
    i = 0
    for cls, n in counts.items():
        for _ in range(n):
            i += 1
            out.append({"patient_id": f"P{i:03d}", "recording_ids": [f"P{i:03d}-R1"],
                        "stroke_type": cls})
    return out


class TestMakeSplits:
    def test_table_ratio_totals(self):
        # 36 patients split 24/6/6 with the published class mix
        patients = _patients({"healthy": 10, "ischemic": 18, "hemorrhagic": 8})
        manifest = eeg_io.make_splits(patients, (24 / 36, 6 / 36, 6 / 36), seed=0)
        assert len(manifest.patients("train")) == 24
        assert len(manifest.patients("validation")) == 6
        assert len(manifest.patients("test")) == 6

    def test_three_patients_three_splits(self):
        patients = _patients({"ischemic": 3})
        manifest = eeg_io.make_splits(patients, (1 / 3, 1 / 3, 1 / 3), seed=1)
        for split in eeg_io.SPLITS:
            assert len(manifest.patients(split)) == 1

    def test_deterministic(self):
        patients = _patients({"healthy": 7, "ischemic": 9, "hemorrhagic": 5})
        a = eeg_io.make_splits(patients, (0.6, 0.2, 0.2), seed=42)
        b = eeg_io.make_splits(patients, (0.6, 0.2, 0.2), seed=42)
        assert a.entries == b.entries

    def test_partition_of_patients(self):
        patients = _patients({"healthy": 8, "ischemic": 12, "hemorrhagic": 6})
        manifest = eeg_io.make_splits(patients, (0.5, 0.25, 0.25), seed=3)
        all_ids = sorted(manifest.patients())
        assert all_ids == sorted(p["patient_id"] for p in patients)

    def test_stratification_within_one_patient(self):
        counts = {"healthy": 9, "ischemic": 15, "hemorrhagic": 6}
        patients = _patients(counts)
        ratios = (0.6, 0.2, 0.2)
        manifest = eeg_io.make_splits(patients, ratios, seed=5)
        for cls, n in counts.items():
            got = [0, 0, 0]
            for e in manifest.entries:
                if e["stroke_type"] == cls:
                    got[eeg_io.SPLITS.index(e["split"])] += 1
            for s, r in enumerate(ratios):
                assert abs(got[s] - n * r) <= 1.0 + 1e-9

    def test_infeasible_class(self):
        patients = _patients({"healthy": 2, "ischemic": 5})
        with pytest.raises(eeg_io.RecordingError, match="infeasible"):
            eeg_io.make_splits(patients, (1 / 3, 1 / 3, 1 / 3), seed=0)


class TestSyntheticCohort:
    def test_patient_counts_and_labels(self):
        spec = eeg_io.SyntheticCohortSpec(
            n_patients_per_class={"healthy": 2, "ischemic": 2, "hemorrhagic": 2},
            duration_s=180, seed=1)
        recs = eeg_io.generate_synthetic_cohort(spec)
        assert len(recs) == 6
        by_class = {}
        for r in recs:
            by_class.setdefault(r.labels.stroke_type, 0)
            by_class[r.labels.stroke_type] += 1
            if r.labels.stroke_type == "healthy":
                assert r.labels.lateralization is None
            else:
                assert r.labels.lateralization in ("left", "right")
        assert by_class == {"healthy": 2, "ischemic": 2, "hemorrhagic": 2}

    def test_fixed_seed_reproduces_byte_stream(self, tmp_path):
        spec = eeg_io.SyntheticCohortSpec(
            n_patients_per_class={"healthy": 1, "ischemic": 1}, seed=9)
        a = eeg_io.generate_synthetic_cohort(spec)
        b = eeg_io.generate_synthetic_cohort(spec)
        for ra, rb in zip(a, b):
            assert ra.samples.tobytes() == rb.samples.tobytes()

    def test_null_recipe_statistically_flat(self):
        spec = eeg_io.SyntheticCohortSpec(
            n_patients_per_class={"hemorrhagic": 1},
            effect_recipes={"hemorrhagic": {"delta": 1.0}},
            duration_s=180, seed=2)
        rec = eeg_io.generate_synthetic_cohort(spec)[0]
        left = rec.samples[[i for i, c in enumerate(CHANNELS_32) if c.endswith("1")
                            or c.endswith("3")]]
        right = rec.samples[[i for i, c in enumerate(CHANNELS_32) if c.endswith("2")
                             or c.endswith("4")]]
        ratio = left.var() / right.var()
        assert 0.9 < ratio < 1.1

    def test_duration_validation(self):
        with pytest.raises(ValueError):
            eeg_io.SyntheticCohortSpec(n_patients_per_class={"healthy": 1},
                                       duration_s=100).validate()
