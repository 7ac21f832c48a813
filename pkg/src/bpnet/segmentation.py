"""Beat detection, two-cycle waveform segmentation, and dataset assembly.

Segments are anchored on PPG systolic peaks: each feature vector spans three
consecutive peaks (two cycles), with the ECG sliced over the same sample
range.  Both slices are resampled to 256 points by linear interpolation and
concatenated with the normalized raw segment length, giving 513 features.
Consecutive vectors are offset by one peak; M of them form one training
sequence, each step paired with the SBP/DBP read from the ABP over its span.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

WAVE_POINTS = 256
FEATURE_DIM = 2 * WAVE_POINTS + 1

R_REFRACTORY_S = 0.24  # 250 bpm ceiling
PPG_REFRACTORY_S = 0.30

DATASET_MAGIC = b"BPSEQ1"


class SegmentationError(ValueError):
    """Unusable window: too few peaks or degenerate signal content."""


class SampleRejected(ValueError):
    """A single segment failed validation and should be dropped."""


@dataclass
class FeatureVector:
    ecg_wave: np.ndarray   # 256 resampled ECG samples
    ppg_wave: np.ndarray   # 256 resampled PPG samples
    norm_length: float     # raw segment length / 256

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.ecg_wave, self.ppg_wave, [self.norm_length]])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FeatureVector":
        if arr.size != FEATURE_DIM:
            raise ValueError(f"expected {FEATURE_DIM} features, got {arr.size}")
        return cls(np.array(arr[:WAVE_POINTS]), np.array(arr[WAVE_POINTS : 2 * WAVE_POINTS]), float(arr[-1]))


@dataclass
class TargetPair:
    sbp: float
    dbp: float

    def to_array(self) -> np.ndarray:
        return np.array([self.sbp, self.dbp])


@dataclass
class SequenceSample:
    inputs: list[FeatureVector]
    targets: list[TargetPair]
    patient_id: str = ""
    start_index: int = 0

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")

    @property
    def m(self) -> int:
        return len(self.inputs)

    def input_array(self) -> np.ndarray:
        return np.stack([fv.to_array() for fv in self.inputs])

    def target_array(self) -> np.ndarray:
        return np.stack([t.to_array() for t in self.targets])


@dataclass
class ChannelStats:
    ecg_mean: float
    ecg_std: float
    ppg_mean: float
    ppg_std: float


@dataclass
class DatasetSplit:
    train: list[SequenceSample]
    validation: list[SequenceSample]
    test: list[SequenceSample]
    stats: ChannelStats


def _plateau_local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of local maxima, plateau-aware (center of each maximal run)."""
    n = x.size
    if n < 3:
        return np.empty(0, dtype=int)
    maxima = []
    i = 1
    while i < n - 1:
        if x[i] > x[i - 1]:
            j = i
            while j < n - 1 and x[j + 1] == x[i]:
                j += 1
            if j < n - 1 and x[j + 1] < x[i]:
                maxima.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return np.asarray(maxima, dtype=int)


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    width = max(1, width)
    kernel = np.full(width, 1.0 / width)
    return np.convolve(x, kernel, mode="same")


def _adaptive_pick(
    envelope: np.ndarray,
    candidates: np.ndarray,
    fs: float,
    refractory_s: float,
    signal_weight: float,
) -> list[int]:
    """Scan candidates in time with an adaptive amplitude threshold.

    Classic running-threshold scheme: accepted peaks pull the signal level,
    rejected ones the noise level, and the threshold sits `signal_weight` of
    the way between them.  Within the refractory window the larger candidate
    wins.
    """
    if candidates.size == 0:
        return []
    refractory = int(round(refractory_s * fs))
    lead = envelope[: min(envelope.size, int(2 * fs))]
    signal_level = float(np.max(lead))
    noise_level = float(np.mean(lead))
    threshold = noise_level + signal_weight * (signal_level - noise_level)

    accepted: list[int] = []
    for idx in candidates:
        if accepted and idx - accepted[-1] < refractory:
            if envelope[idx] > envelope[accepted[-1]]:
                accepted[-1] = int(idx)
            continue
        if envelope[idx] > threshold:
            accepted.append(int(idx))
            signal_level = 0.125 * envelope[idx] + 0.875 * signal_level
        else:
            noise_level = 0.125 * envelope[idx] + 0.875 * noise_level
        threshold = noise_level + signal_weight * (signal_level - noise_level)
    return accepted


def _dedupe_refractory(indices: list[int], strength: np.ndarray, refractory: int) -> np.ndarray:
    """Keep the stronger of any two detections closer than `refractory`."""
    kept: list[int] = []
    for idx in sorted(indices):
        if kept and idx - kept[-1] < refractory:
            if strength[idx] > strength[kept[-1]]:
                kept[-1] = idx
        else:
            kept.append(idx)
    return np.asarray(kept, dtype=int)


def detect_r_peaks(ecg: np.ndarray, fs: float) -> np.ndarray:
    """R-peak indices, polarity-robust, with a 0.24 s refractory floor.

    Works on the derivative-energy envelope, then refines each detection to
    the largest absolute deflection from the local median so that negative-R
    morphologies resolve to the same sample as positive ones.
    """
    x = np.asarray(ecg, dtype=float)
    if x.size < int(fs):
        raise SegmentationError("ECG window shorter than one second")
    diff = np.diff(x, prepend=x[0])
    envelope = _moving_average(diff * diff, int(round(0.15 * fs)))
    candidates = _plateau_local_maxima(envelope)
    coarse = _adaptive_pick(envelope, candidates, fs, R_REFRACTORY_S, signal_weight=0.25)

    half = int(round(0.10 * fs))
    refined = []
    for idx in coarse:
        lo, hi = max(0, idx - half), min(x.size, idx + half + 1)
        window = x[lo:hi]
        refined.append(lo + int(np.argmax(np.abs(window - np.median(window)))))
    peaks = _dedupe_refractory(refined, np.abs(x - np.median(x)), int(round(R_REFRACTORY_S * fs)))
    if peaks.size < 3:
        raise SegmentationError(f"only {peaks.size} R peaks found; window unusable")
    return peaks


def detect_ppg_peaks(ppg: np.ndarray, fs: float) -> np.ndarray:
    """Systolic (positive) peak indices with a 0.3 s refractory floor.

    The amplitude threshold adapts midway between running signal and noise
    levels, which rejects dicrotic bumps riding the diastolic decay.
    """
    x = np.asarray(ppg, dtype=float)
    if x.size < int(fs):
        raise SegmentationError("PPG window shorter than one second")
    smooth = _moving_average(x, int(round(0.04 * fs)))
    candidates = _plateau_local_maxima(smooth)
    coarse = _adaptive_pick(smooth, candidates, fs, PPG_REFRACTORY_S, signal_weight=0.5)

    half = int(round(0.06 * fs))
    refined = []
    for idx in coarse:
        lo, hi = max(0, idx - half), min(x.size, idx + half + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    peaks = _dedupe_refractory(refined, x, int(round(PPG_REFRACTORY_S * fs)))
    if peaks.size < 3:
        raise SegmentationError(f"only {peaks.size} PPG peaks found; window unusable")
    return peaks


def resample_to(slice_: np.ndarray, points: int = WAVE_POINTS) -> np.ndarray:
    """Linear-interpolation resample onto a uniform grid of `points` samples."""
    n = slice_.size
    if n == points:
        return slice_.astype(float, copy=True)
    grid = np.linspace(0.0, n - 1.0, points)
    return np.interp(grid, np.arange(n, dtype=float), slice_)


def build_feature_vector(
    ecg: np.ndarray,
    ppg: np.ndarray,
    peak_i: int,
    peak_i2: int,
    fs: float = 125.0,
) -> FeatureVector:
    """Two-cycle feature vector over [peak_i, peak_i2); no zero padding."""
    if peak_i2 <= peak_i:
        raise SampleRejected(f"peak order violation: {peak_i} >= {peak_i2}")
    length = peak_i2 - peak_i
    if length < 16:
        raise SampleRejected(f"segment of {length} samples shorter than 16")
    if length > 10.0 * fs:
        raise SampleRejected(f"segment of {length} samples longer than 10 s")
    if peak_i < 0 or peak_i2 > min(ecg.size, ppg.size):
        raise SampleRejected("segment outside signal bounds")
    ecg_slice = np.asarray(ecg[peak_i:peak_i2], dtype=float)
    ppg_slice = np.asarray(ppg[peak_i:peak_i2], dtype=float)
    return FeatureVector(
        resample_to(ecg_slice),
        resample_to(ppg_slice),
        length / float(WAVE_POINTS),
    )


def _span_extrema(seg: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-beat maxima and minima of an ABP span, spacing-limited."""
    spacing = int(round(0.3 * fs))
    lo, hi = float(np.min(seg)), float(np.max(seg))
    if hi - lo <= 1e-9:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    mid = 0.5 * (lo + hi)
    maxima = _plateau_local_maxima(seg)
    maxima = maxima[seg[maxima] > mid]
    maxima = _dedupe_refractory(list(maxima), seg, spacing)
    minima = _plateau_local_maxima(-seg)
    minima = minima[seg[minima] < mid]
    minima = _dedupe_refractory(list(minima), -seg, spacing)
    return maxima, minima


def extract_targets(abp: np.ndarray, fs: float, span: tuple[int, int]) -> TargetPair:
    """Mean per-beat systolic maxima / diastolic minima over `span`."""
    start, end = span
    seg = np.asarray(abp[start:end], dtype=float)
    if seg.size == 0:
        raise SampleRejected("empty ABP span")
    maxima, minima = _span_extrema(seg, fs)
    if maxima.size == 0 or minima.size == 0:
        raise SampleRejected("no detectable ABP beats in span")
    sbp = float(np.mean(seg[maxima]))
    dbp = float(np.mean(seg[minima]))
    if not (20.0 < dbp < sbp < 300.0):
        raise SampleRejected(f"implausible pressures sbp={sbp:.1f} dbp={dbp:.1f}")
    return TargetPair(sbp, dbp)


def build_sequences(
    ecg: np.ndarray,
    ppg: np.ndarray,
    abp: np.ndarray,
    fs: float,
    m: int,
    patient_id: str = "",
    index_offset: int = 0,
) -> list[SequenceSample]:
    """Sliding sequences of M two-cycle vectors, offset by one peak each.

    A window with P usable peaks yields P-2 vectors and max(0, P-2-M+1)
    sequences; any rejected member vector drops its containing sequences.
    """
    if m < 1:
        raise ValueError(f"sequence length must be >= 1, got {m}")
    peaks = detect_ppg_peaks(ppg, fs)
    # With fewer than M+2 peaks the sliding count below is simply empty.

    entries: list[Optional[tuple[FeatureVector, TargetPair]]] = []
    for i in range(peaks.size - 2):
        lo, hi = int(peaks[i]), int(peaks[i + 2])
        try:
            fv = build_feature_vector(ecg, ppg, lo, hi, fs)
            tgt = extract_targets(abp, fs, (lo, hi))
            entries.append((fv, tgt))
        except SampleRejected:
            entries.append(None)

    sequences = []
    for s in range(len(entries) - m + 1):
        window = entries[s : s + m]
        if any(e is None for e in window):
            continue
        sequences.append(
            SequenceSample(
                inputs=[e[0] for e in window],
                targets=[e[1] for e in window],
                patient_id=patient_id,
                start_index=index_offset + int(peaks[s]),
            )
        )
    return sequences


def split_and_standardize(
    samples: list[SequenceSample],
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    min_sequences: int = 10,
) -> DatasetSplit:
    """Chronological per-patient split plus train-only channel standardization.

    Per patient, the earliest 70% of sequences train, the next 10% validate,
    and the rest test; ECG and PPG sub-vectors are scaled by scalar mean/std
    computed on the training partition only.  norm_length and targets stay in
    natural units.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    by_patient: dict[str, list[SequenceSample]] = {}
    for sample in samples:
        by_patient.setdefault(sample.patient_id, []).append(sample)

    train: list[SequenceSample] = []
    validation: list[SequenceSample] = []
    test: list[SequenceSample] = []
    for patient in sorted(by_patient):
        ordered = sorted(by_patient[patient], key=lambda s: s.start_index)
        n = len(ordered)
        if n < min_sequences:
            warnings.warn(f"patient {patient!r} has only {n} sequences; excluded", stacklevel=2)
            continue
        n_train = int(fractions[0] * n)
        n_val = int(fractions[1] * n)
        train.extend(ordered[:n_train])
        validation.extend(ordered[n_train : n_train + n_val])
        test.extend(ordered[n_train + n_val :])

    if not train:
        raise SegmentationError("no patients with enough sequences to split")

    ecg_all = np.concatenate([fv.ecg_wave for s in train for fv in s.inputs])
    ppg_all = np.concatenate([fv.ppg_wave for s in train for fv in s.inputs])
    stats = ChannelStats(
        float(np.mean(ecg_all)),
        float(np.std(ecg_all)) or 1.0,
        float(np.mean(ppg_all)),
        float(np.std(ppg_all)) or 1.0,
    )

    def standardized(split: list[SequenceSample]) -> list[SequenceSample]:
        out = []
        for s in split:
            inputs = [
                FeatureVector(
                    (fv.ecg_wave - stats.ecg_mean) / stats.ecg_std,
                    (fv.ppg_wave - stats.ppg_mean) / stats.ppg_std,
                    fv.norm_length,
                )
                for fv in s.inputs
            ]
            out.append(SequenceSample(inputs, list(s.targets), s.patient_id, s.start_index))
        return out

    return DatasetSplit(standardized(train), standardized(validation), standardized(test), stats)


def standardize_features(arr: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Apply train-set channel statistics to raw feature rows (..., 513)."""
    out = np.array(arr, dtype=float)
    out[..., :WAVE_POINTS] = (out[..., :WAVE_POINTS] - stats.ecg_mean) / stats.ecg_std
    out[..., WAVE_POINTS : 2 * WAVE_POINTS] = (
        out[..., WAVE_POINTS : 2 * WAVE_POINTS] - stats.ppg_mean
    ) / stats.ppg_std
    return out


def save_dataset(split: DatasetSplit, path) -> None:
    """Write the BPSEQ1 container plus a sidecar CSV manifest.

    Layout: magic "BPSEQ1"; uint32 sequence count, M, feature dim; four
    float64 channel statistics; then one little-endian float32 block per
    sequence (M x 513 features followed by M x 2 targets), sequence-major in
    train, validation, test order.  The manifest lists (patient, start index,
    split) per sequence in file order.
    """
    ordered = [("train", s) for s in split.train]
    ordered += [("validation", s) for s in split.validation]
    ordered += [("test", s) for s in split.test]
    if not ordered:
        raise ValueError("empty dataset")
    m = ordered[0][1].m
    if any(s.m != m for _, s in ordered):
        raise ValueError("mixed sequence lengths in dataset")

    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", len(ordered), m, FEATURE_DIM))
        fh.write(
            struct.pack(
                "<dddd", split.stats.ecg_mean, split.stats.ecg_std,
                split.stats.ppg_mean, split.stats.ppg_std,
            )
        )
        for _, sample in ordered:
            fh.write(sample.input_array().astype("<f4").tobytes())
            fh.write(sample.target_array().astype("<f4").tobytes())

    manifest = str(path) + ".manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient", "start_index", "split"])
        for name, sample in ordered:
            writer.writerow([sample.patient_id, sample.start_index, name])


def load_dataset(path) -> DatasetSplit:
    """Read a BPSEQ1 container written by :func:`save_dataset`."""
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != DATASET_MAGIC:
            raise ValueError(f"bad dataset magic {magic!r}")
        count, m, dim = struct.unpack("<III", fh.read(12))
        if dim != FEATURE_DIM:
            raise ValueError(f"unsupported feature dim {dim}")
        stats = ChannelStats(*struct.unpack("<dddd", fh.read(32)))
        payload = fh.read()

    per_seq = (m * dim + m * 2) * 4
    if len(payload) < count * per_seq:
        raise ValueError("truncated dataset payload")

    rows = []
    manifest = str(path) + ".manifest.csv"
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != count:
        raise ValueError("manifest row count does not match dataset")

    splits: dict[str, list[SequenceSample]] = {"train": [], "validation": [], "test": []}
    offset = 0
    for row in rows:
        block = np.frombuffer(payload, dtype="<f4", count=m * dim, offset=offset)
        offset += m * dim * 4
        targets = np.frombuffer(payload, dtype="<f4", count=m * 2, offset=offset)
        offset += m * 2 * 4
        features = block.reshape(m, dim).astype(float)
        tgt = targets.reshape(m, 2).astype(float)
        sample = SequenceSample(
            inputs=[FeatureVector.from_array(features[t]) for t in range(m)],
            targets=[TargetPair(float(tgt[t, 0]), float(tgt[t, 1])) for t in range(m)],
            patient_id=row["patient"],
            start_index=int(row["start_index"]),
        )
        splits[row["split"]].append(sample)
    return DatasetSplit(splits["train"], splits["validation"], splits["test"], stats)
