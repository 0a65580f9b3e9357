"""Raw recordings, epoch slicing, feature files, and synthetic data.

File formats are plain CSV with decimal text.  Feature values are written with
repr() so a load(save(x)) round trip reproduces float64 values exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .montage import CHANNELS, ELECTRODE_COORDS, LABEL_INDEX, LABELS

BAND_NAMES = ("delta", "theta", "alpha", "beta", "gamma")

FEATURE_COLUMNS = tuple(f"{ch}_{band}" for ch in CHANNELS for band in BAND_NAMES)


class DataFormatError(ValueError):
    """Base class for malformed input data."""


class MissingChannel(DataFormatError):
    pass


class NonNumericSample(DataFormatError):
    pass


class EmptyFile(DataFormatError):
    pass


class TooShort(DataFormatError):
    pass


class SchemaMismatch(DataFormatError):
    pass


class UnknownLabel(DataFormatError):
    pass


@dataclass(frozen=True)
class RawRecording:
    """Continuous multi-channel signal with a per-sample emotion label track."""

    subject_id: str
    sample_rate_hz: float
    channel_names: tuple[str, ...]
    samples: np.ndarray  # (14, n_samples) float64
    labels: np.ndarray  # (n_samples,) int8, indexes into LABELS


@dataclass(frozen=True)
class Epoch:
    subject_id: str
    label: int  # 0 = pleasure, 1 = rage
    samples: np.ndarray  # (14, window_len)
    start: int  # offset of the window in the parent recording


@dataclass(frozen=True)
class FeatureSample:
    subject_id: str
    label: int
    features: np.ndarray  # (14, 5) differential entropies, nats


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int
    samples_per_subject_per_class: int
    class_separation: float
    subject_shift: float
    noise_scale: float
    rng_seed: int = 0


def _parse_float(token: str, path: Path, row: int, col: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise NonNumericSample(
            f"{path}: row {row}, column {col}: not a number: {token!r}"
        ) from None
    if not math.isfinite(value):
        raise NonNumericSample(f"{path}: row {row}, column {col}: non-finite value")
    return value


def _parse_label(token: str, path: Path, row: int) -> int:
    try:
        return LABEL_INDEX[token]
    except KeyError:
        raise UnknownLabel(
            f"{path}: row {row}: label {token!r} not in {LABELS}"
        ) from None


def load_raw(path: str | Path, sample_rate_hz: float = 128.0) -> RawRecording:
    """Read a raw recording CSV: one row per sample, 14 channel columns + label.

    Columns may appear in any order; they are reordered to montage order.
    The subject id is the file stem.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise SchemaMismatch(f"{path}: no 'label' column in header")
        names = [h for h in header if h != "label"]
        if sorted(names) != sorted(CHANNELS) or len(header) != len(set(header)):
            raise MissingChannel(
                f"{path}: channel columns {names} do not match the montage {list(CHANNELS)}"
            )
        order = [header.index(ch) for ch in CHANNELS]
        label_col = header.index("label")

        rows: list[list[float]] = []
        labels: list[int] = []
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise SchemaMismatch(
                    f"{path}: row {i}: expected {len(header)} fields, got {len(rec)}"
                )
            rows.append([_parse_float(rec[j], path, i, header[j]) for j in order])
            labels.append(_parse_label(rec[label_col].strip(), path, i))

    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    samples = np.asarray(rows, dtype=np.float64).T
    return RawRecording(
        subject_id=path.stem,
        sample_rate_hz=float(sample_rate_hz),
        channel_names=CHANNELS,
        samples=samples,
        labels=np.asarray(labels, dtype=np.int8),
    )


def slice_epochs(rec: RawRecording, window_seconds: float = 1.0) -> list[Epoch]:
    """Cut the recording into windows of window_seconds with half-window overlap.

    Windows that straddle a label boundary are dropped, so every epoch carries
    a single label.  With a constant label track the number of epochs is
    floor((n - window_len) / hop) + 1.
    """
    window_len = int(round(rec.sample_rate_hz * window_seconds))
    if window_len < 2:
        raise ValueError(f"window of {window_seconds} s at {rec.sample_rate_hz} Hz is degenerate")
    hop = window_len // 2
    n = rec.samples.shape[1]
    if n < window_len:
        raise TooShort(
            f"{rec.subject_id}: {n} samples < one window ({window_len} samples)"
        )
    epochs = []
    for start in range(0, n - window_len + 1, hop):
        window_labels = rec.labels[start : start + window_len]
        if window_labels.min() != window_labels.max():
            continue
        epochs.append(
            Epoch(
                subject_id=rec.subject_id,
                label=int(window_labels[0]),
                samples=rec.samples[:, start : start + window_len].copy(),
                start=start,
            )
        )
    return epochs


def generate_synthetic(spec: SyntheticSpec) -> list[FeatureSample]:
    """Draw feature samples directly in differential-entropy space.

    Class means sit at +/- class_separation/2 along a rank-one direction whose
    channel profile is strictly positive, so the class signal survives both
    channel mixing and sum pooling.  Each subject gets a fixed rank-one offset
    of norm subject_shift concentrated on one dominant channel, and its band
    direction deliberately overlaps the class band profile with a random sign:
    a subject's baseline biases the very readout a source-trained classifier
    relies on, which is what leave-one-subject-out transfer has to overcome.
    Noise is correlated across channels with exp(-distance/0.5) falloff over
    the montage geometry, mimicking volume conduction, so channel dependence
    is something a mutual-information graph can actually measure.
    Deterministic given rng_seed.
    """
    if spec.n_subjects < 1 or spec.samples_per_subject_per_class < 1:
        raise ValueError("need at least one subject and one sample per class")
    if min(spec.class_separation, spec.subject_shift, spec.noise_scale) < 0:
        raise ValueError("separation, shift, and noise scale must be non-negative")

    rng = np.random.default_rng(spec.rng_seed)
    n_ch, n_bands = len(CHANNELS), len(BAND_NAMES)

    gaps = np.linalg.norm(ELECTRODE_COORDS[:, None] - ELECTRODE_COORDS[None, :], axis=-1)
    mixing = np.linalg.cholesky(np.exp(-gaps / 0.5))  # unit per-channel variance

    band_profile = rng.standard_normal(n_bands)
    band_profile /= np.linalg.norm(band_profile)
    chan_profile = np.abs(rng.standard_normal(n_ch)) + 0.5
    chan_profile /= np.linalg.norm(chan_profile)
    direction = np.outer(chan_profile, band_profile)  # unit Frobenius norm
    class_mean = {
        0: -0.5 * spec.class_separation * direction,
        1: +0.5 * spec.class_separation * direction,
    }

    width = max(2, len(str(spec.n_subjects)))
    samples: list[FeatureSample] = []
    for s in range(spec.n_subjects):
        subject = f"s{s + 1:0{width}d}"
        dominant = rng.integers(n_ch)
        chan_weights = 0.25 * rng.dirichlet(np.full(n_ch, 0.3))
        chan_weights[dominant] += 0.75
        chan_pattern = np.sqrt(chan_weights)
        stray = rng.standard_normal(n_bands)
        stray -= (stray @ band_profile) * band_profile
        stray_norm = np.linalg.norm(stray)
        if stray_norm > 0:
            stray /= stray_norm
        mix = 0.6 if rng.random() < 0.5 else -0.6
        band_dir = mix * band_profile + np.sqrt(1.0 - mix * mix) * stray
        offset = spec.subject_shift * np.outer(chan_pattern, band_dir)
        for label in (0, 1):
            center = class_mean[label] + offset
            noise = mixing @ rng.standard_normal(
                (spec.samples_per_subject_per_class, n_ch, n_bands)
            )
            for x in center + spec.noise_scale * noise:
                samples.append(FeatureSample(subject_id=subject, label=label, features=x))
    return samples


def save_features(samples: list[FeatureSample], path: str | Path) -> None:
    """Write feature samples as CSV; values use repr() for exact round trips."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "label", *FEATURE_COLUMNS])
        for s in samples:
            feats = np.asarray(s.features, dtype=np.float64)
            if feats.shape != (len(CHANNELS), len(BAND_NAMES)):
                raise SchemaMismatch(
                    f"sample for {s.subject_id} has shape {feats.shape}, expected "
                    f"({len(CHANNELS)}, {len(BAND_NAMES)})"
                )
            writer.writerow(
                [s.subject_id, LABELS[s.label], *(repr(float(v)) for v in feats.reshape(-1))]
            )


def load_features(path: str | Path) -> list[FeatureSample]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: empty file") from None
        expected = ["subject", "label", *FEATURE_COLUMNS]
        if [h.strip() for h in header] != expected:
            raise SchemaMismatch(
                f"{path}: header does not match the feature schema "
                f"(subject,label,{FEATURE_COLUMNS[0]},...)"
            )
        samples = []
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(expected):
                raise SchemaMismatch(
                    f"{path}: row {i}: expected {len(expected)} fields, got {len(rec)}"
                )
            values = [
                _parse_float(tok, path, i, col)
                for tok, col in zip(rec[2:], FEATURE_COLUMNS)
            ]
            samples.append(
                FeatureSample(
                    subject_id=rec[0].strip(),
                    label=_parse_label(rec[1].strip(), path, i),
                    features=np.asarray(values, dtype=np.float64).reshape(
                        len(CHANNELS), len(BAND_NAMES)
                    ),
                )
            )
    if not samples:
        raise EmptyFile(f"{path}: no data rows")
    return samples
