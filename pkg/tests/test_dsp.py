import numpy as np
import pytest

from strokesight import dsp, eeg_io
from strokesight.montage import CHANNELS_32, LEFT_CHANNELS, RIGHT_CHANNELS


def _dtft_magnitude(coeffs, freqs, fs):
    """Independent frequency-response oracle: direct DTFT summation."""
    n = np.arange(len(coeffs))
    return np.abs(np.exp(-2j * np.pi * np.outer(freqs, n) / fs) @ coeffs)


def _recording(samples, fs=256.0):
    return eeg_io.Recording(
        patient_id="P1", recording_id="P1-R1", sample_rate_hz=fs,
        channel_names=list(CHANNELS_32), samples=samples.astype(np.float32),
        labels=eeg_io.LabelSet("healthy"))


class TestFirDesign:
    @pytest.mark.parametrize("fs", [128.0, 256.0, 512.0])
    def test_meets_spec_at_all_rates(self, fs):
        spec = dsp.FirSpec()
        coeffs = dsp.design_fir(spec, fs)
        assert len(coeffs) % 2 == 1
        np.testing.assert_allclose(coeffs, coeffs[::-1], atol=1e-15)
        freqs = np.linspace(0.0, fs / 2, 6001)
        mag = _dtft_magnitude(coeffs, freqs, fs)
        passband = (freqs >= spec.low_cut_hz + spec.transition_width_hz) & \
                   (freqs <= spec.high_cut_hz - spec.transition_width_hz)
        assert np.abs(mag[passband] - 1.0).max() < spec.max_passband_ripple
        stop_lo = freqs <= 0.05
        stop_hi = freqs >= spec.high_cut_hz + 2 * spec.transition_width_hz
        assert mag[stop_lo].max() < 0.01
        assert mag[stop_hi].max() < 0.01

    def test_midband_response_near_unity(self):
        coeffs = dsp.design_fir(dsp.FirSpec(), 256.0)
        mag = _dtft_magnitude(coeffs, np.array([30.0]), 256.0)
        assert 0.99 <= mag[0] <= 1.01

    def test_measured_transition_within_bound(self):
        spec = dsp.FirSpec()
        fs = 256.0
        coeffs = dsp.design_fir(spec, fs)
        freqs = np.linspace(55.0, 65.0, 4001)
        mag = _dtft_magnitude(coeffs, freqs, fs)
        f_pass = freqs[mag >= 0.99].max()
        f_stop = freqs[(freqs > f_pass) & (mag <= 0.01)].min()
        assert f_stop - f_pass <= spec.transition_width_hz

    def test_infeasible_spec(self):
        with pytest.raises(dsp.FilterDesignError):
            dsp.design_fir(dsp.FirSpec(high_cut_hz=70.0), 128.0)
        with pytest.raises(dsp.FilterDesignError):
            dsp.design_fir(dsp.FirSpec(low_cut_hz=0.0), 256.0)


class TestFilterSignal:
    def test_dc_suppressed(self):
        fs = 256.0
        rec = _recording(np.full((32, int(70 * fs)), 50.0), fs)
        coeffs = dsp.design_fir(dsp.FirSpec(), fs)
        out = dsp.filter_signal(rec, coeffs)
        edge = out.meta["edge_samples"]
        assert np.abs(out.samples[:, edge:-edge]).max() < 0.01 * 50.0

    def test_10hz_sine_amplitude_preserved(self):
        fs = 256.0
        t = np.arange(int(70 * fs)) / fs
        sine = np.sin(2 * np.pi * 10.0 * t)
        rec = _recording(np.tile(sine, (32, 1)), fs)
        coeffs = dsp.design_fir(dsp.FirSpec(), fs)
        out = dsp.filter_signal(rec, coeffs)
        edge = out.meta["edge_samples"]
        core = out.samples[0, edge:-edge].astype(np.float64)
        amplitude = np.sqrt(2.0) * core.std()
        assert abs(amplitude - 1.0) < 0.01

    def test_impulse_recovers_coefficients(self):
        fs = 128.0
        n = int(65 * fs)
        samples = np.zeros((32, n))
        center = n // 2
        samples[:, center] = 1.0
        rec = _recording(samples, fs)
        coeffs = dsp.design_fir(dsp.FirSpec(), fs)
        out = dsp.filter_signal(rec, coeffs)
        delay = (len(coeffs) - 1) // 2
        got = out.samples[0, center - delay:center - delay + len(coeffs)]
        np.testing.assert_allclose(got, coeffs, atol=1e-6)

    def test_filter_longer_than_signal(self):
        fs = 512.0
        rec = _recording(np.zeros((32, 100)) + 1.0, fs)
        rec.samples = rec.samples[:, :100]
        coeffs = dsp.design_fir(dsp.FirSpec(), fs)
        with pytest.raises(ValueError, match="longer than signal"):
            dsp.filter_signal(rec, coeffs)


class TestSegmentation:
    def test_long_recording_truncated(self):
        fs = 128.0
        rec = _recording(np.random.default_rng(0).normal(size=(32, int(200 * fs))), fs)
        segs = dsp.segment_recording(rec)
        assert len(segs) == 3
        assert all(s.samples.shape[1] == int(60 * fs) for s in segs)
        assert all(s.padded_samples == 0 for s in segs)

    def test_exact_180s_no_padding(self):
        fs = 128.0
        rec = _recording(np.random.default_rng(1).normal(size=(32, int(180 * fs))), fs)
        segs = dsp.segment_recording(rec)
        assert [s.padded_samples for s in segs] == [0, 0, 0]

    def test_170s_pads_last_segment(self):
        fs = 128.0
        rec = _recording(np.random.default_rng(2).normal(size=(32, int(170 * fs))), fs)
        segs = dsp.segment_recording(rec)
        assert segs[0].padded_samples == 0
        assert segs[1].padded_samples == 0
        assert segs[2].padded_samples == int(10 * fs)
        assert np.all(segs[2].samples[:, -int(10 * fs):] == 0)

    def test_partition_reconstructs_signal(self):
        fs = 128.0
        data = np.random.default_rng(3).normal(size=(32, int(180 * fs)))
        rec = _recording(data, fs)
        segs = dsp.segment_recording(rec)
        glued = np.concatenate([s.samples for s in segs], axis=1)
        np.testing.assert_allclose(glued, rec.samples.astype(np.float64), atol=1e-6)

    def test_too_short_raises(self):
        fs = 128.0
        rec = _recording(np.zeros((32, int(30 * fs))), fs)
        with pytest.raises(ValueError):
            dsp.segment_recording(rec)


class TestWelch:
    def test_k1_equals_direct_modified_periodogram(self):
        fs = 256.0
        rng = np.random.default_rng(0)
        x = rng.normal(size=int(4 * fs))
        est = dsp.welch_psd(x, dsp.WelchConfig(window_len_s=4.0), fs)
        assert est.n_windows == 1
        # independent periodogram oracle
        n = len(x)
        k = np.arange(n)
        w = 0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1))
        spec = np.abs(np.fft.rfft(w * x)) ** 2 / (fs * np.sum(w ** 2))
        spec[1:] *= 2.0
        if n % 2 == 0:
            spec[-1] /= 2.0
        rel = np.abs(est.psd[0] - spec) / np.maximum(np.abs(spec), 1e-300)
        assert rel.max() < 1e-10

    def test_white_noise_parseval(self):
        fs = 256.0
        rng = np.random.default_rng(42)
        sigma2 = 4.0
        integrals = []
        for _ in range(100):
            x = rng.normal(0, np.sqrt(sigma2), int(60 * fs))
            est = dsp.welch_psd(x, dsp.WelchConfig(), fs)
            integrals.append(np.trapezoid(est.psd[0], est.freqs_hz))
        assert abs(np.mean(integrals) - sigma2) / sigma2 < 0.10

    def test_sine_peak_at_10hz(self):
        fs = 256.0
        t = np.arange(int(60 * fs)) / fs
        est = dsp.welch_psd(np.sin(2 * np.pi * 10 * t), dsp.WelchConfig(), fs)
        assert est.freqs_hz[np.argmax(est.psd[0])] == pytest.approx(10.0, abs=0.25)

    def test_segment_shorter_than_window(self):
        with pytest.raises(ValueError, match="shorter than window"):
            dsp.welch_psd(np.zeros(100), dsp.WelchConfig(window_len_s=4.0), 256.0)


class TestBandPowers:
    def test_constant_psd_gives_bandwidths(self):
        freqs = np.linspace(0, 64, 257)
        est = dsp.SpectrumEstimate(freqs_hz=freqs, psd=np.ones((2, freqs.size)),
                                   n_windows=1)
        bp = dsp.band_powers(est, dsp.BandScheme())
        widths = np.diff(dsp.DEFAULT_BAND_EDGES)
        np.testing.assert_allclose(bp, np.tile(widths, (2, 1)), rtol=1e-12)

    def test_zero_psd_gives_zeros(self):
        freqs = np.linspace(0, 64, 257)
        est = dsp.SpectrumEstimate(freqs_hz=freqs, psd=np.zeros((1, freqs.size)),
                                   n_windows=1)
        np.testing.assert_array_equal(dsp.band_powers(est, dsp.BandScheme()), 0.0)

    def test_linearity_in_psd(self):
        rng = np.random.default_rng(5)
        freqs = np.linspace(0, 64, 257)
        psd = rng.uniform(0, 3, size=(3, freqs.size))
        est1 = dsp.SpectrumEstimate(freqs_hz=freqs, psd=psd, n_windows=1)
        est2 = dsp.SpectrumEstimate(freqs_hz=freqs, psd=2.5 * psd, n_windows=1)
        scheme = dsp.BandScheme()
        np.testing.assert_allclose(dsp.band_powers(est2, scheme),
                                   2.5 * dsp.band_powers(est1, scheme), rtol=1e-12)

    def test_delta_signal_concentrates_power(self):
        fs = 256.0
        rng = np.random.default_rng(7)
        n = int(60 * fs)
        spec = np.fft.rfft(rng.normal(size=n))
        freqs = np.fft.rfftfreq(n, 1 / fs)
        spec[(freqs < 0.5) | (freqs > 3.5)] = 0.0
        x = np.fft.irfft(spec, n=n)
        est = dsp.welch_psd(x, dsp.WelchConfig(), fs)
        bp = dsp.band_powers(est, dsp.BandScheme())[0]
        assert bp[:2].sum() / bp.sum() > 0.9


class TestFeaturize:
    def _segment(self, powers):
        return dsp.RawSegment("P1", "P1-R1", 0, 256.0,
                              np.zeros((powers.shape[0], 10)),
                              eeg_io.LabelSet("healthy"))

    def test_log_closed_forms(self):
        powers = np.zeros((32, 10))
        powers[0, 0] = 9.0
        feats = dsp.featurize(powers, self._segment(powers))
        assert feats.matrix[0, 0] == pytest.approx(1.0)
        assert feats.matrix[1, 1] == 0.0

    def test_negative_power_rejected(self):
        powers = np.full((32, 10), -1.0)
        with pytest.raises(ValueError):
            dsp.featurize(powers, self._segment(powers))

    def test_standardized_train_set_has_zero_mean_unit_std(self):
        rng = np.random.default_rng(9)
        raw = [dsp.featurize(rng.uniform(0, 5, (32, 10)), self._segment(np.zeros((32, 10))))
               for _ in range(40)]
        std = dsp.Standardizer.fit(raw)
        applied = np.stack([std.apply(f.matrix) for f in raw])
        np.testing.assert_allclose(applied.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(applied.std(axis=0), 1.0, atol=1e-9)

    def test_standardizer_train_only(self):
        with pytest.raises(ValueError, match="train"):
            dsp.Standardizer.fit([], fitted_on="test")


class TestGeneratorBandSignature:
    def test_hemorrhagic_left_delta_ratio(self):
        spec = eeg_io.SyntheticCohortSpec(
            n_patients_per_class={"hemorrhagic": 1}, seed=3)
        rec = eeg_io.generate_synthetic_cohort(spec)[0]
        assert rec.labels.lateralization == "left"
        seg = dsp.segment_recording(rec)[0]
        est = dsp.welch_psd(seg.samples, dsp.WelchConfig(), rec.sample_rate_hz)
        bp = dsp.band_powers(est, dsp.BandScheme())
        left = [i for i, c in enumerate(CHANNELS_32) if c in LEFT_CHANNELS]
        right = [i for i, c in enumerate(CHANNELS_32) if c in RIGHT_CHANNELS]
        delta = bp[:, :2].sum(axis=1)
        ratio = delta[left].mean() / delta[right].mean()
        expected = spec.effect_recipes["hemorrhagic"]["delta"]
        assert abs(ratio - expected) / expected < 0.10


class TestFeatureCache:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        feats = [dsp.SegmentFeatures("P1", "P1-R1", i, rng.normal(size=(32, 10)),
                                     eeg_io.LabelSet("ischemic", "left", "small"),
                                     standardized=True)
                 for i in range(3)]
        path = tmp_path / "P1-R1.feat.json"
        dsp.save_features(feats, path, dsp.BandScheme(), "train")
        loaded, scheme, std_id = dsp.load_features(path)
        assert std_id == "train"
        assert scheme.edges_hz == dsp.BandScheme().edges_hz
        for a, b in zip(feats, loaded):
            np.testing.assert_allclose(a.matrix, b.matrix)
            assert a.labels == b.labels


def test_notch_kills_50hz():
    fs = 256.0
    t = np.arange(int(70 * fs)) / fs
    sig = np.sin(2 * np.pi * 50.0 * t) + 0.5 * np.sin(2 * np.pi * 10.0 * t)
    rec = _recording(np.tile(sig, (32, 1)), fs)
    out = dsp.notch_50hz(rec)
    est = dsp.welch_psd(out.samples[0].astype(np.float64), dsp.WelchConfig(), fs)
    p50 = est.psd[0, np.argmin(np.abs(est.freqs_hz - 50.0))]
    p10 = est.psd[0, np.argmin(np.abs(est.freqs_hz - 10.0))]
    assert p50 < 0.01 * p10
