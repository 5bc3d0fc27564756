"""Deterministic signal primitives shared by the analysis and the online classifier.

Every function here is pure: inputs are never modified and no state is kept
between calls.
"""
from dataclasses import dataclass

import numpy as np
from scipy import signal

from models.errors import (InvalidFilterSpecError, NonUniformSeriesError,
                           ShortInputError, SignalError)

# Maximum deviation of a sample period from the nominal one, as a fraction
UNIFORM_JITTER = 0.1


@dataclass(frozen=True)
class ScalarSeries:
    t: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))
        if self.t.shape != self.value.shape:
            raise SignalError("series time and value lengths differ")

    def __len__(self):
        return len(self.t)

    @classmethod
    def uniform(cls, values, dt, t0=0.0):
        values = np.asarray(values, dtype=float)
        return cls(t0 + np.arange(len(values)) * dt, values)

    @property
    def dt(self):
        if len(self.t) < 2:
            raise SignalError("series needs at least 2 samples to define dt")
        return float(np.median(np.diff(self.t)))

    def is_uniform(self):
        if len(self.t) < 2:
            return False
        steps = np.diff(self.t)
        nominal = float(np.median(steps))
        if nominal <= 0:
            return False
        return bool(np.max(np.abs(steps - nominal)) < UNIFORM_JITTER * nominal)

    def slice(self, start, end):
        return ScalarSeries(self.t[start:end], self.value[start:end])


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float
    sample_rate_hz: float
    order: int = 2

    def validate(self):
        if self.order != 2:
            raise InvalidFilterSpecError("only second-order filters are supported")
        if self.sample_rate_hz <= 0:
            raise InvalidFilterSpecError("sample rate must be positive")
        nyquist = self.sample_rate_hz / 2.0
        if not 0 < self.cutoff_hz < nyquist:
            raise InvalidFilterSpecError(
                f"cutoff {self.cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)")
        return self

    @property
    def warm_up(self):
        return self.order + 1

    def coefficients(self):
        # scipy designs through the bilinear transform with pre-warping
        return signal.butter(self.order, self.cutoff_hz, btype="low", fs=self.sample_rate_hz)


def butter2_magnitude(spec, freq_hz):
    """Analytic magnitude of the digital second-order Butterworth low-pass at freq_hz"""
    spec.validate()
    warped = np.tan(np.pi * np.asarray(freq_hz, dtype=float) / spec.sample_rate_hz)
    warped_cutoff = np.tan(np.pi * spec.cutoff_hz / spec.sample_rate_hz)
    return 1.0 / np.sqrt(1.0 + (warped / warped_cutoff) ** (2 * spec.order))


def _require_uniform(series):
    if not series.is_uniform():
        raise NonUniformSeriesError("series is not uniformly sampled")


def lowpass_butter2(series, spec, zero_phase=False):
    """Second-order Butterworth low-pass.

    Causal mode starts from the steady state of the first sample so short
    trials do not show a start-up transient. Zero-phase mode runs the same
    filter forward and backward and is meant for offline analysis only.
    """
    spec.validate()
    _require_uniform(series)
    n = len(series)
    if n < 3 * spec.warm_up:
        raise ShortInputError(f"series of {n} samples is shorter than 3x the filter warm-up")

    b, a = spec.coefficients()
    x = series.value
    if zero_phase:
        y = signal.filtfilt(b, a, x, padlen=min(3 * max(len(a), len(b)), n - 1))
    else:
        zi = signal.lfilter_zi(b, a) * x[0]
        y, _ = signal.lfilter(b, a, x, zi=zi)
    return ScalarSeries(series.t.copy(), y)


def derivative(series):
    """Central differences inside, first-order one-sided differences at both ends"""
    if len(series) < 3:
        raise ShortInputError("derivative needs at least 3 samples")
    _require_uniform(series)
    return ScalarSeries(series.t.copy(), np.gradient(series.value, series.dt, edge_order=1))


def distance_series(traj, target):
    """Euclidean distance of every wrist sample to a fixed 3-D target"""
    target = np.asarray(target, dtype=float).reshape(3)
    return ScalarSeries(traj.t.copy(), np.linalg.norm(traj.pos - target, axis=1))


def speed_series(traj):
    """Speed norm of the wrist, differentiated per axis"""
    if len(traj) < 3:
        raise ShortInputError("speed needs at least 3 samples")
    velocity = np.gradient(traj.pos, traj.t, axis=0, edge_order=1)
    return ScalarSeries(traj.t.copy(), np.linalg.norm(velocity, axis=1))


def resample(series, n_out):
    """Linear interpolation onto n_out evenly spaced points over the same span"""
    if n_out < 2:
        raise SignalError(f"cannot resample to {n_out} points; at least 2 are required")
    new_t = np.linspace(series.t[0], series.t[-1], int(n_out))
    values = np.interp(new_t, series.t, series.value)
    # np.interp already hits the end points, pin them anyway against rounding in linspace
    values[0] = series.value[0]
    values[-1] = series.value[-1]
    return ScalarSeries(new_t, values)


def aggregate_profiles(profiles):
    """Pointwise mean and population standard deviation of equal-length profiles"""
    profiles = list(profiles)
    if not profiles:
        raise SignalError("cannot aggregate an empty set of profiles")
    length = len(profiles[0])
    if any(len(p) != length for p in profiles):
        raise SignalError("profiles must be resampled to a common length first")
    stack = np.vstack([p.value for p in profiles])
    t = profiles[0].t.copy()
    return ScalarSeries(t, stack.mean(axis=0)), ScalarSeries(t.copy(), stack.std(axis=0))


def velocity_profile_summary(trajectories, phases, cutoff_hz=8.0):
    """Mean and std wrist speed per carefulness label over the given phases.

    Speeds are low-pass filtered with the zero-phase filter, each class is
    resampled to its median duration and then averaged sample by sample.
    """
    per_label = {}
    for traj in trajectories:
        start = min(traj.meta.phases[p][0] for p in phases)
        end = max(traj.meta.phases[p][1] for p in phases)
        speed = speed_series(traj).slice(start, end)
        spec = FilterSpec(cutoff_hz=cutoff_hz, sample_rate_hz=traj.sample_rate_hz)
        per_label.setdefault(traj.meta.label, []).append(lowpass_butter2(speed, spec, zero_phase=True))

    summary = {}
    for label, speeds in per_label.items():
        median_len = int(np.median([len(s) for s in speeds]))
        resampled = [resample(s, median_len) for s in speeds]
        summary[label] = aggregate_profiles(resampled)
    return summary
