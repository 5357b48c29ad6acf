"""Raw EMG conditioning: full-wave rectification, low-pass smoothing, decimation.

The feature used throughout the package is the smoothed rectified amplitude of
each electrode channel, so a trial of N samples over D channels maps to an
(N', D) feature matrix with one class label per retained row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .errors import DataQualityError, FilterDesignError


@dataclass(frozen=True)
class RawTrial:
    """One recorded trial: raw multi-channel signal plus per-sample labels."""

    samples: np.ndarray  # (N, D) raw amplitudes
    fs: float  # sampling frequency in Hz
    labels: np.ndarray  # (N,) class indices in 1..C
    subject_id: str
    trial_id: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise DataQualityError(
                f"trial {self.subject_id}/{self.trial_id}: samples must be a "
                f"non-empty N x D matrix, got shape {samples.shape}"
            )
        if labels.shape != (samples.shape[0],):
            raise DataQualityError(
                f"trial {self.subject_id}/{self.trial_id}: need one label per "
                f"sample, got {labels.shape} labels for {samples.shape[0]} rows"
            )
        if labels.min() < 1:
            raise DataQualityError(
                f"trial {self.subject_id}/{self.trial_id}: class labels start at 1"
            )
        if not self.fs > 0:
            raise DataQualityError(f"sampling frequency must be positive, got {self.fs}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FilterCoefficients:
    """Normalized biquad (a0 = 1): y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def __post_init__(self):
        if abs(self.dc_gain() - 1.0) > 1e-9:
            raise FilterDesignError(f"DC gain must be 1, got {self.dc_gain()!r}")
        if np.max(np.abs(self.poles())) >= 1.0:
            raise FilterDesignError("filter poles must lie strictly inside the unit circle")

    def dc_gain(self) -> float:
        return (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])

    def as_ba(self) -> tuple[np.ndarray, np.ndarray]:
        """(b, a) arrays in the convention used by scipy.signal."""
        return (
            np.array([self.b0, self.b1, self.b2]),
            np.array([1.0, self.a1, self.a2]),
        )


@dataclass(frozen=True)
class FeatureSequence:
    """Smoothed amplitude features for one trial, labels aligned row-for-row.

    IIR transients may undershoot zero, so entries are only required to be
    finite, not nonnegative.
    """

    features: np.ndarray  # (N', D)
    labels: np.ndarray  # (N',) class indices in 1..C
    subject_id: str
    trial_id: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2:
            raise DataQualityError("features must be an N x D matrix")
        if labels.shape != (features.shape[0],):
            raise DataQualityError("labels must align 1:1 with feature rows")
        if not np.all(np.isfinite(features)):
            raise DataQualityError(
                f"trial {self.subject_id}/{self.trial_id}: non-finite feature values"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self, n_classes: int) -> np.ndarray:
        """Samples per class, indexed 0..C-1 for classes 1..C."""
        return np.bincount(self.labels, minlength=n_classes + 1)[1:]


@dataclass(frozen=True)
class PreprocessConfig:
    """Smoothing cutoff and optional decimation applied after filtering."""

    cutoff_hz: float = 1.0
    decimation: int = 1

    def __post_init__(self):
        if not self.cutoff_hz > 0:
            raise FilterDesignError(f"cutoff must be positive, got {self.cutoff_hz}")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise DataQualityError(f"decimation factor must be an integer >= 1, got {self.decimation}")


def full_wave_rectify(trial: RawTrial) -> RawTrial:
    """Replace every sample by its absolute value; labels and fs unchanged."""
    if not np.all(np.isfinite(trial.samples)):
        raise DataQualityError(
            f"trial {trial.subject_id}/{trial.trial_id}: non-finite samples"
        )
    return replace(trial, samples=np.abs(trial.samples))


def design_butterworth2_lowpass(fs: float, fc: float) -> FilterCoefficients:
    """Second-order Butterworth low-pass by bilinear transform with prewarping.

    The analog prototype 1 / (s^2 + sqrt(2) s + 1) is discretized with the
    cutoff prewarped so the -3 dB point lands exactly at fc. The resulting
    coefficients give unity DC gain analytically: the numerator sums to
    4 b0 and so does the denominator.
    """
    if not fc > 0 or not fc < fs / 2:
        raise FilterDesignError(
            f"cutoff must satisfy 0 < fc < fs/2, got fc={fc}, fs={fs}"
        )
    c = 1.0 / math.tan(math.pi * fc / fs)
    norm = 1.0 / (1.0 + math.sqrt(2.0) * c + c * c)
    return FilterCoefficients(
        b0=norm,
        b1=2.0 * norm,
        b2=norm,
        a1=2.0 * (1.0 - c * c) * norm,
        a2=(1.0 - math.sqrt(2.0) * c + c * c) * norm,
    )


def apply_filter(coeffs: FilterCoefficients, trial: RawTrial) -> RawTrial:
    """Causal single-pass filtering per channel, zero initial state.

    Causality matches real-time use; a zero-phase variant would belong here
    as an alternative entry point if offline analysis ever needs one.
    """
    if not np.all(np.isfinite(trial.samples)):
        raise DataQualityError(
            f"trial {trial.subject_id}/{trial.trial_id}: non-finite samples"
        )
    b, a = coeffs.as_ba()
    filtered = lfilter(b, a, trial.samples, axis=0)
    return replace(trial, samples=filtered)


def extract_features(trial: RawTrial, cfg: PreprocessConfig = PreprocessConfig()) -> FeatureSequence:
    """Rectify, smooth, and optionally keep every k-th sample.

    Decimation keeps rows 0, k, 2k, ... with labels decimated identically.
    """
    coeffs = design_butterworth2_lowpass(trial.fs, cfg.cutoff_hz)
    smoothed = apply_filter(coeffs, full_wave_rectify(trial))
    k = int(cfg.decimation)
    return FeatureSequence(
        features=smoothed.samples[::k],
        labels=smoothed.labels[::k],
        subject_id=trial.subject_id,
        trial_id=trial.trial_id,
    )
