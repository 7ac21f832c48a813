import numpy as np
import pytest

from bpnet.segmentation import (
    FEATURE_DIM,
    FeatureVector,
    SampleRejected,
    SegmentationError,
    SequenceSample,
    TargetPair,
    build_feature_vector,
    build_sequences,
    detect_ppg_peaks,
    detect_r_peaks,
    extract_targets,
    load_dataset,
    resample_to,
    save_dataset,
    split_and_standardize,
)

FS = 125.0


def _pulse_train(n_pulses, f0=1.2, fs=FS, start=0.3, dicrotic=0.0, lead_out=1.0):
    """Raised-cosine-upstroke pulses; returns (signal, apex indices)."""
    duration = start + n_pulses / f0 + lead_out
    n = int(duration * fs)
    t = np.arange(n) / fs
    sig = np.zeros(n)
    period = 1.0 / f0
    apexes = []
    for k in range(n_pulses):
        tk = start + k * period
        ph = (t - tk) / period
        mask = (ph >= 0) & (ph < 1)
        pulse = np.zeros(n)
        pulse[mask] = np.sin(np.pi * np.clip(ph[mask] / 0.35, 0, 1)) ** 2 * np.exp(-2.0 * ph[mask])
        if dicrotic:
            pulse[mask] += dicrotic * np.exp(-0.5 * ((ph[mask] - 0.55) / 0.06) ** 2)
        apexes.append(int(np.argmax(pulse)))
        sig += pulse
    return sig, np.array(apexes)


class TestRPeaks:
    def test_impulse_train_at_multiples_of_fs(self):
        n = int(10 * FS)
        x = np.zeros(n)
        truth = np.arange(int(FS), n, int(FS))
        x[truth] = 1.0
        assert np.array_equal(detect_r_peaks(x, FS), truth)

    def test_negated_train_identical(self):
        n = int(10 * FS)
        x = np.zeros(n)
        truth = np.arange(int(FS), n, int(FS))
        x[truth] = 1.0
        assert np.array_equal(detect_r_peaks(-x, FS), detect_r_peaks(x, FS))

    def test_noisy_synthetic_beats_matched(self, rng):
        # Generator truth: gaussian R spikes + T waves at 72 bpm, 15 dB SNR.
        n = int(30 * FS)
        t = np.arange(n) / FS
        beat_times = np.arange(0.8, 29.5, 60.0 / 72.0)
        ecg = np.zeros(n)
        for tk in beat_times:
            ecg += 1.2 * np.exp(-0.5 * ((t - tk) / 0.012) ** 2)
            ecg += 0.25 * np.exp(-0.5 * ((t - tk - 0.25) / 0.06) ** 2)
        noise = rng.standard_normal(n) * np.sqrt(np.mean(ecg**2) / 10**1.5)
        detected = detect_r_peaks(ecg + noise, FS)
        truth_idx = np.round(beat_times * FS).astype(int)
        matched = sum(np.min(np.abs(detected - ti)) <= 0.04 * FS for ti in truth_idx)
        assert matched / len(truth_idx) >= 0.95

    def test_refractory_spacing(self):
        n = int(10 * FS)
        x = np.zeros(n)
        x[np.arange(int(FS), n, int(FS))] = 1.0
        peaks = detect_r_peaks(x, FS)
        assert np.all(np.diff(peaks) >= 0.24 * FS)

    def test_too_few_peaks_rejected(self):
        with pytest.raises(SegmentationError):
            detect_r_peaks(np.zeros(int(5 * FS)), FS)


class TestPpgPeaks:
    def test_raised_cosine_train_apexes(self):
        sig, apexes = _pulse_train(11)
        detected = detect_ppg_peaks(sig, FS)
        assert len(detected) == len(apexes)
        assert np.max(np.abs(detected - apexes)) <= 1

    def test_dicrotic_bump_not_detected(self):
        sig, apexes = _pulse_train(11, dicrotic=0.40)
        detected = detect_ppg_peaks(sig, FS)
        assert len(detected) == len(apexes)
        for d in detected:
            assert np.min(np.abs(apexes - d)) <= 2

    def test_flat_signal_rejected(self):
        with pytest.raises(SegmentationError, match="PPG peaks"):
            detect_ppg_peaks(np.zeros(int(8 * FS)), FS)


class TestFeatureVector:
    def test_identity_resample_256(self):
        ecg = np.sin(np.arange(600) * 0.04)
        ppg = np.cos(np.arange(600) * 0.03)
        fv = build_feature_vector(ecg, ppg, 100, 356, FS)
        assert np.max(np.abs(fv.ecg_wave - ecg[100:356])) <= 1e-12
        assert np.max(np.abs(fv.ppg_wave - ppg[100:356])) <= 1e-12
        assert fv.norm_length == pytest.approx(1.0)

    def test_linear_ramp_preserved(self):
        ramp = np.linspace(0.0, 1.0, 300)
        fv = build_feature_vector(ramp, ramp, 0, 300, FS)
        expected = np.linspace(0.0, 1.0, 256)
        assert np.max(np.abs(fv.ecg_wave - expected)) <= 1e-9

    def test_norm_length_arithmetic(self):
        ecg = np.zeros(400)
        fv = build_feature_vector(ecg, ecg, 50, 300, FS)
        assert fv.norm_length == pytest.approx(250.0 / 256.0)

    def test_endpoints_preserved(self, rng):
        x = rng.standard_normal(500)
        fv = build_feature_vector(x, x, 17, 417, FS)
        assert fv.ecg_wave[0] == pytest.approx(x[17], abs=1e-12)
        assert fv.ecg_wave[-1] == pytest.approx(x[416], abs=1e-12)

    def test_rejects_short_and_long(self):
        x = np.zeros(3000)
        with pytest.raises(SampleRejected, match="shorter"):
            build_feature_vector(x, x, 0, 10, FS)
        with pytest.raises(SampleRejected, match="longer"):
            build_feature_vector(x, x, 0, int(10 * FS) + 1, FS)

    def test_array_roundtrip(self, rng):
        fv = FeatureVector(rng.standard_normal(256), rng.standard_normal(256), 0.9)
        arr = fv.to_array()
        assert arr.size == FEATURE_DIM
        back = FeatureVector.from_array(arr)
        assert np.array_equal(back.ecg_wave, fv.ecg_wave)
        assert back.norm_length == fv.norm_length


class TestTargets:
    def test_constant_abp_rejected(self):
        with pytest.raises(SampleRejected, match="no detectable"):
            extract_targets(np.full(300, 100.0), FS, (0, 300))

    def test_sinusoidal_abp(self):
        # Analytic extrema: 100 +/- 20 over two full cycles at 1.2 Hz.
        n = int(2 / 1.2 * FS) + 1
        t = np.arange(n) / FS
        abp = 100 + 20 * np.sin(2 * np.pi * 1.2 * t)
        pair = extract_targets(abp, FS, (0, n))
        assert pair.sbp == pytest.approx(120.0, abs=0.5)
        assert pair.dbp == pytest.approx(80.0, abs=0.5)

    def test_two_beat_averaging(self):
        seg = np.concatenate(
            [
                np.linspace(80, 118, 40), np.linspace(118, 78, 40),
                np.linspace(78, 122, 40), np.linspace(122, 82, 40),
                np.linspace(82, 100, 20),
            ]
        )
        pair = extract_targets(seg, FS, (0, seg.size))
        assert pair.sbp == pytest.approx(120.0)
        assert pair.dbp == pytest.approx(80.0)

    def test_implausible_values_rejected(self):
        n = int(2 / 1.2 * FS) + 1
        t = np.arange(n) / FS
        too_high = 400 + 20 * np.sin(2 * np.pi * 1.2 * t)
        with pytest.raises(SampleRejected, match="implausible"):
            extract_targets(too_high, FS, (0, n))


def _aligned_triple(n_pulses, f0=1.2):
    ppg, _ = _pulse_train(n_pulses, f0=f0)
    n = ppg.size
    t = np.arange(n) / FS
    ecg = 0.5 * ppg
    abp = 100 + 20 * np.sin(2 * np.pi * f0 * (t - 0.05))
    return ecg, ppg, abp


class TestSequences:
    def test_counting_rule(self):
        for n_pulses, m, expected in [(12, 10, 1), (11, 10, 0), (5, 1, 3)]:
            ecg, ppg, abp = _aligned_triple(n_pulses)
            seqs = build_sequences(ecg, ppg, abp, FS, m, patient_id="p")
            assert len(seqs) == expected, (n_pulses, m)

    def test_sequence_structure(self):
        ecg, ppg, abp = _aligned_triple(14)
        seqs = build_sequences(ecg, ppg, abp, FS, 10, patient_id="p")
        for seq in seqs:
            assert seq.m == 10
            arr = seq.input_array()
            assert arr.shape == (10, FEATURE_DIM)
            assert np.all(np.isfinite(arr))
            assert seq.target_array().shape == (10, 2)

    def test_overlap_by_one_peak(self):
        ecg, ppg, abp = _aligned_triple(14)
        peaks = detect_ppg_peaks(ppg, FS)
        seqs = build_sequences(ecg, ppg, abp, FS, 3, patient_id="p")
        # Raw segment lengths track the peak spacing; consecutive vectors
        # share two of their three anchor peaks.
        for seq in seqs:
            lengths = [fv.norm_length * 256 for fv in seq.inputs]
            spans = np.diff(peaks)
            for j, ln in enumerate(lengths):
                assert any(
                    abs(ln - (spans[i] + spans[i + 1])) < 1e-9 for i in range(len(spans) - 1)
                )

    def test_start_indices_strictly_increase(self):
        ecg, ppg, abp = _aligned_triple(16)
        seqs = build_sequences(ecg, ppg, abp, FS, 4, patient_id="p")
        starts = [s.start_index for s in seqs]
        assert all(b > a for a, b in zip(starts, starts[1:]))


def _toy_samples(count, patient="p0", m=4, start=0, rng=None):
    rng = rng or np.random.default_rng(0)
    out = []
    for i in range(count):
        inputs = [
            FeatureVector(rng.standard_normal(256) * 2 + 1.0, rng.standard_normal(256) * 3 - 0.5, 0.9)
            for _ in range(m)
        ]
        targets = [TargetPair(120.0 + rng.normal(), 80.0 + rng.normal()) for _ in range(m)]
        out.append(SequenceSample(inputs, targets, patient, start + i))
    return out


class TestSplit:
    def test_fraction_counts(self):
        split = split_and_standardize(_toy_samples(100))
        assert (len(split.train), len(split.validation), len(split.test)) == (70, 10, 20)

    def test_train_standardized_to_unit_moments(self):
        split = split_and_standardize(_toy_samples(50))
        ecg_all = np.concatenate([fv.ecg_wave for s in split.train for fv in s.inputs])
        ppg_all = np.concatenate([fv.ppg_wave for s in split.train for fv in s.inputs])
        assert abs(np.mean(ecg_all)) <= 1e-9
        assert abs(np.std(ecg_all) - 1.0) <= 1e-9
        assert abs(np.mean(ppg_all)) <= 1e-9
        assert abs(np.std(ppg_all) - 1.0) <= 1e-9

    def test_validation_uses_train_statistics(self):
        rng = np.random.default_rng(1)
        samples = _toy_samples(50, rng=rng)
        # Shift the later (validation/test) samples so their own moments differ.
        for s in samples[35:]:
            for fv in s.inputs:
                fv.ecg_wave += 4.0
        split = split_and_standardize(samples)
        val_ecg = np.concatenate([fv.ecg_wave for s in split.validation for fv in s.inputs])
        assert abs(np.mean(val_ecg)) > 0.5  # standardized with train stats, not its own

    def test_chronological_no_leakage(self):
        samples = _toy_samples(60, start=0)
        split = split_and_standardize(samples)
        train_max = max(s.start_index for s in split.train)
        val_idx = [s.start_index for s in split.validation]
        test_min = min(s.start_index for s in split.test)
        assert train_max < min(val_idx)
        assert max(val_idx) < test_min

    def test_small_patient_excluded_with_warning(self):
        samples = _toy_samples(40, patient="big") + _toy_samples(5, patient="tiny", start=1000)
        with pytest.warns(UserWarning, match="tiny"):
            split = split_and_standardize(samples)
        patients = {s.patient_id for s in split.train + split.validation + split.test}
        assert patients == {"big"}

    def test_norm_length_and_targets_untouched(self):
        samples = _toy_samples(20)
        raw_norm = samples[0].inputs[0].norm_length
        raw_sbp = samples[0].targets[0].sbp
        split = split_and_standardize(samples)
        assert split.train[0].inputs[0].norm_length == raw_norm
        assert split.train[0].targets[0].sbp == raw_sbp

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            split_and_standardize(_toy_samples(20), fractions=(0.5, 0.2, 0.2))


class TestDatasetFile:
    def test_roundtrip(self, tmp_path):
        split = split_and_standardize(_toy_samples(30))
        path = tmp_path / "data.bpseq"
        save_dataset(split, path)
        assert path.read_bytes()[:6] == b"BPSEQ1"
        assert (tmp_path / "data.bpseq.manifest.csv").exists()
        loaded = load_dataset(path)
        assert len(loaded.train) == len(split.train)
        assert len(loaded.test) == len(split.test)
        assert loaded.stats.ecg_mean == pytest.approx(split.stats.ecg_mean)
        # float32 payload: compare at storage precision
        orig = split.train[3].input_array()
        back = loaded.train[3].input_array()
        assert np.max(np.abs(orig - back)) <= 1e-5 * max(1.0, np.max(np.abs(orig)))

    def test_resample_helper_identity(self, rng):
        x = rng.standard_normal(256)
        assert np.array_equal(resample_to(x), x)
        assert resample_to(x) is not x
