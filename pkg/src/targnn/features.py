"""Spectral band power and differential-entropy features.

Band power is a rectangular-window periodogram: remove the mean, take the DFT,
and sum 2/n^2 * |F_k|^2 over the bins whose center frequency falls in the
band.  For a sinusoid of amplitude a on an exact bin this gives a^2/2, the
time-domain variance.  Differential entropy then treats each band-limited
signal as Gaussian: 0.5 * ln(2*pi*e*variance), in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import BAND_NAMES, Epoch, FeatureSample

# Variances are floored here so differential entropy stays finite on silent
# or constant channels.
VAR_FLOOR = 1e-12


class BandOutOfRange(ValueError):
    pass


class NonPositiveVariance(ValueError):
    pass


@dataclass(frozen=True)
class BandDefinition:
    name: str
    lo_hz: float
    hi_hz: float
    include_hi: bool = False  # closed upper edge; only the top band uses it

    def mask(self, freqs_hz: np.ndarray) -> np.ndarray:
        mask = (freqs_hz >= self.lo_hz) & (freqs_hz < self.hi_hz)
        if self.include_hi:
            mask |= freqs_hz == self.hi_hz
        return mask


BANDS = (
    BandDefinition("delta", 0.5, 4.0),
    BandDefinition("theta", 4.0, 8.0),
    BandDefinition("alpha", 8.0, 13.0),
    BandDefinition("beta", 13.0, 32.0),
    BandDefinition("gamma", 32.0, 50.0, include_hi=True),
)

assert tuple(b.name for b in BANDS) == BAND_NAMES


def band_power(x: np.ndarray, sample_rate_hz: float, band: BandDefinition) -> float:
    """Periodogram power of x inside the band, floored at VAR_FLOOR."""
    if not 0.0 < band.lo_hz < band.hi_hz <= sample_rate_hz / 2.0:
        raise BandOutOfRange(
            f"band {band.name} [{band.lo_hz}, {band.hi_hz}] Hz outside "
            f"(0, {sample_rate_hz / 2.0}] at {sample_rate_hz} Hz"
        )
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    spectrum = np.fft.rfft(x - x.mean())
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    power = 2.0 / (n * n) * np.sum(np.abs(spectrum[band.mask(freqs)]) ** 2)
    return float(max(power, VAR_FLOOR))


def bandlimit(
    x: np.ndarray, sample_rate_hz: float, lo_hz: float = 0.5, hi_hz: float = 50.0
) -> np.ndarray:
    """Reconstruct x from the DFT bins with center frequency in [lo_hz, hi_hz].

    Used to estimate channel dependence on the same spectral support the
    features see.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    spectrum = np.fft.rfft(x - x.mean(axis=-1, keepdims=True), axis=-1)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    spectrum[..., (freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    return np.fft.irfft(spectrum, n=n, axis=-1)


def differential_entropy(variance: float) -> float:
    """Entropy of a Gaussian with the given variance, in nats."""
    if variance <= 0.0:
        raise NonPositiveVariance(f"variance must be positive, got {variance}")
    return 0.5 * math.log(2.0 * math.pi * math.e * variance)


def extract_features(epoch: Epoch, sample_rate_hz: float | None = None) -> FeatureSample:
    """Differential entropy of every channel in every band: a 14 x 5 matrix.

    Epochs are one-second windows, so the window length doubles as the sample
    rate unless one is given explicitly.
    """
    if sample_rate_hz is None:
        sample_rate_hz = float(epoch.samples.shape[1])
    feats = np.empty((epoch.samples.shape[0], len(BANDS)), dtype=np.float64)
    for c, channel in enumerate(epoch.samples):
        for b, band in enumerate(BANDS):
            feats[c, b] = differential_entropy(
                band_power(channel, sample_rate_hz, band)
            )
    return FeatureSample(subject_id=epoch.subject_id, label=epoch.label, features=feats)
