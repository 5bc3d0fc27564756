"""Labeled synthetic reach-and-transport trajectories.

Every trial is a stationary pre-reach dwell, a min-jerk reach from the start
position to the cup, a short grasp dwell, a min-jerk transport from the cup to
the handover location and a final hold. Careful trials (full cup) move slower
and, during transport, for longer.
"""
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from models.errors import SignalError, UsageError
from models.trajectory import (CarefulnessLabel, Condition, CupContent, Phase,
                               TrialMeta, Trajectory, VelocityProfile)

CUP_FOR_LABEL = {
    CarefulnessLabel.NOT_CAREFUL: CupContent.EMPTY,
    CarefulnessLabel.CAREFUL: CupContent.FULL,
}

# Durations below this are never generated
MIN_DURATION_S = 0.3
# Floor for sampled peak speeds
MIN_PEAK_SPEED = 0.05


@dataclass(frozen=True)
class MinJerkParams:
    distance: float
    duration: float
    sample_rate_hz: float = 120.0

    def validate(self):
        if not self.distance > 0:
            raise SignalError(f"min-jerk distance must be positive, got {self.distance}")
        if not self.duration > 0:
            raise SignalError(f"min-jerk duration must be positive, got {self.duration}")
        if not self.sample_rate_hz > 0:
            raise SignalError("min-jerk sample rate must be positive")
        return self


def min_jerk_position(tau):
    """Normalised path fraction of a minimum-jerk move at normalised time tau"""
    tau = np.clip(tau, 0.0, 1.0)
    return 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5


def min_jerk_speed(tau, distance, duration):
    return (30.0 * distance / duration) * (tau ** 2 - 2 * tau ** 3 + tau ** 4)


def min_jerk(params):
    """Bell-shaped speed norm of a minimum-jerk point-to-point move"""
    params.validate()
    n = max(2, int(round(params.duration * params.sample_rate_hz)))
    tau = np.arange(n + 1) / n
    values = min_jerk_speed(tau, params.distance, params.duration)
    profile = VelocityProfile(params.duration / n, values)
    # trapezoidal integral equals the distance exactly
    return VelocityProfile(profile.dt, values * (params.distance / profile.integral()))


@dataclass(frozen=True)
class DurationDistribution:
    mean: float
    std: float

    @property
    def bounds(self):
        return max(MIN_DURATION_S, self.mean - 3 * self.std), self.mean + 3 * self.std


@dataclass(frozen=True)
class LabelKinematics:
    reach_peak: float
    transport_peak: float
    transport_duration: DurationDistribution


@dataclass(frozen=True)
class SynthConfig:
    # not-careful baselines, careful ones follow from the gaps below
    reach_peak_not_careful: float = 1.1
    transport_peak_not_careful: float = 0.95
    # careful minus not careful
    reach_peak_gap: float = -0.202
    transport_peak_gap: float = -0.276
    peak_speed_std: float = 0.05
    reach_duration: float = 0.9
    transport_duration_not_careful: DurationDistribution = DurationDistribution(1.62, 0.5)
    transport_duration_careful: DurationDistribution = DurationDistribution(2.32, 0.59)
    pre_dwell: float = 0.2
    grasp_dwell: float = 0.15
    handover_hold: float = 0.3
    noise_std: float = 0.001
    jitter_std: float = 0.01
    sample_rate_hz: float = 120.0
    handover_location: Tuple[float, float, float] = (0.6, 0.0, 1.0)
    transport_direction: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    reach_direction: Tuple[float, float, float] = (0.0, 0.6, -0.8)
    seed: int = 0

    def kinematics(self, label):
        if label is CarefulnessLabel.CAREFUL:
            return LabelKinematics(self.reach_peak_not_careful + self.reach_peak_gap,
                                   self.transport_peak_not_careful + self.transport_peak_gap,
                                   self.transport_duration_careful)
        return LabelKinematics(self.reach_peak_not_careful, self.transport_peak_not_careful,
                               self.transport_duration_not_careful)

    def validate(self):
        for label in CarefulnessLabel:
            kin = self.kinematics(label)
            if kin.reach_peak <= 0 or kin.transport_peak <= 0:
                raise UsageError(f"peak speeds for {label.value} must be positive")
            if kin.transport_duration.std < 0 or kin.transport_duration.mean <= MIN_DURATION_S:
                raise UsageError(f"transport duration for {label.value} must exceed {MIN_DURATION_S} s")
        if self.reach_duration <= MIN_DURATION_S:
            raise UsageError(f"reach duration must exceed {MIN_DURATION_S} s")
        if min(self.pre_dwell, self.grasp_dwell, self.handover_hold) < 0:
            raise UsageError("dwell times must be non-negative")
        if self.noise_std < 0 or self.jitter_std < 0 or self.peak_speed_std < 0:
            raise UsageError("noise levels must be non-negative")
        if self.sample_rate_hz <= 0:
            raise UsageError("sample rate must be positive")
        for name in ("transport_direction", "reach_direction"):
            if np.linalg.norm(getattr(self, name)) == 0:
                raise UsageError(f"{name} must be a non-zero vector")
        return self

    def without_noise(self):
        return replace(self, noise_std=0.0, jitter_std=0.0)


@dataclass
class _Streams:
    durations: np.random.Generator
    peaks: np.random.Generator
    jitter: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        if isinstance(seed, np.random.SeedSequence):
            # fresh copy, repeated calls must spawn the same children
            seq = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
        else:
            seq = np.random.SeedSequence(seed)
        return cls(*(np.random.default_rng(child) for child in seq.spawn(4)))


def _truncated_normal(rng, mean, std, low, high):
    while True:
        value = mean + std * rng.standard_normal()
        if low <= value <= high:
            return float(value)


def _unit(vector):
    vector = np.asarray(vector, dtype=float)
    return vector / np.linalg.norm(vector)


def _perpendicular(direction):
    helper = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    return _unit(np.cross(direction, helper))


def _segment(start, end, n, lateral):
    """n samples of a min-jerk move from start (inclusive) towards end (exclusive)"""
    tau = np.arange(n) / n
    direction = end - start
    offset = np.sin(np.pi * tau)[:, None] * (lateral * _perpendicular(_unit(direction)))
    return start + min_jerk_position(tau)[:, None] * direction + offset


def _hold(point, n):
    return np.repeat(point[None, :], n, axis=0)


def synth_trial(label, cfg, seed, trial_id=None):
    """One synthetic trajectory of the given label, deterministic in seed"""
    cfg.validate()
    streams = _Streams.from_seed(seed)
    kin = cfg.kinematics(label)
    fs = cfg.sample_rate_hz

    low, high = kin.transport_duration.bounds
    transport_duration = _truncated_normal(streams.durations, kin.transport_duration.mean,
                                           kin.transport_duration.std, low, high)
    reach_peak = max(MIN_PEAK_SPEED, kin.reach_peak + cfg.peak_speed_std * streams.peaks.standard_normal())
    transport_peak = max(MIN_PEAK_SPEED,
                         kin.transport_peak + cfg.peak_speed_std * streams.peaks.standard_normal())

    n_pre = int(round(cfg.pre_dwell * fs))
    n_reach = max(2, int(round(cfg.reach_duration * fs)))
    n_grasp = int(round(cfg.grasp_dwell * fs))
    n_transport = max(2, int(round(transport_duration * fs)))
    n_hold = int(round(cfg.handover_hold * fs)) + 1

    # peak speed of a min-jerk move is 15 d / (8 T)
    reach_distance = 8.0 * reach_peak * (n_reach / fs) / 15.0
    transport_distance = 8.0 * transport_peak * (n_transport / fs) / 15.0

    handover = np.asarray(cfg.handover_location, dtype=float)
    cup = handover - transport_distance * _unit(cfg.transport_direction)
    start = cup - reach_distance * _unit(cfg.reach_direction)

    reach_lateral, transport_lateral = cfg.jitter_std * streams.jitter.standard_normal(2)
    pos = np.vstack([
        _hold(start, n_pre),
        _segment(start, cup, n_reach, reach_lateral),
        _hold(cup, n_grasp),
        _segment(cup, handover, n_transport, transport_lateral),
        _hold(handover, n_hold),
    ])
    if cfg.noise_std > 0:
        pos = pos + streams.noise.normal(0.0, cfg.noise_std, size=pos.shape)

    reach_end = n_pre + n_reach + n_grasp
    carry_end = reach_end + n_transport
    phases = {
        Phase.PRE: (0, n_pre),
        Phase.REACH: (n_pre, reach_end),
        Phase.CARRY: (reach_end, carry_end),
        Phase.HANDOVER: (carry_end, len(pos)),
    }
    if n_pre == 0:
        del phases[Phase.PRE]

    meta = TrialMeta(trial_id=trial_id or f"{label.value}-0000", cup=CUP_FOR_LABEL[label],
                     condition=Condition.NEU, phases=phases)
    return Trajectory(np.arange(len(pos)) / fs, pos, meta)


def dataset_plan(n_per_label, cfg, seed=None):
    """(label, seed, trial_id) for every trial of a dataset, in dataset order.

    Child seeds are spawned from one master seed and shared by the two labels
    of the same index.
    """
    if n_per_label < 1:
        raise UsageError(f"need at least one trial per label, got {n_per_label}")
    master = np.random.SeedSequence(cfg.seed if seed is None else seed)
    plan = []
    for index, child in enumerate(master.spawn(n_per_label)):
        for label in (CarefulnessLabel.NOT_CAREFUL, CarefulnessLabel.CAREFUL):
            plan.append((label, child, f"{label.value}-{index:04d}"))
    return plan


def synth_dataset(n_per_label, cfg, seed=None):
    """n_per_label trials per label"""
    return [synth_trial(label, cfg, child, trial_id=trial_id)
            for label, child, trial_id in dataset_plan(n_per_label, cfg, seed)]
