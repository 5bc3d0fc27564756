from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, NamedTuple, Tuple

import numpy as np

from models.errors import SignalError


class CarefulnessLabel(Enum):
    NOT_CAREFUL = "not_careful"
    CAREFUL = "careful"


class CupContent(Enum):
    EMPTY = "empty"
    FULL = "full"


class Condition(Enum):
    NEU = "neu"
    EXP = "exp"


class Phase(Enum):
    PRE = "pre"
    REACH = "reach"
    CARRY = "carry"
    HANDOVER = "handover"


# Order in which phases appear inside a trial
PHASE_ORDER = (Phase.PRE, Phase.REACH, Phase.CARRY, Phase.HANDOVER)


def label_for_cup(cup):
    """Full cups are handled carefully, empty cups are not"""
    return CarefulnessLabel.CAREFUL if cup is CupContent.FULL else CarefulnessLabel.NOT_CAREFUL


class Sample(NamedTuple):
    t: float
    pos: Tuple[float, float, float]


@dataclass(frozen=True)
class TrialMeta:
    trial_id: str
    cup: CupContent
    condition: Condition = Condition.NEU
    # phase -> (start index inclusive, end index exclusive)
    phases: Dict[Phase, Tuple[int, int]] = field(default_factory=dict)

    @property
    def label(self):
        return label_for_cup(self.cup)


@dataclass(frozen=True)
class Trajectory:
    """Timestamped 3-D wrist positions of one recorded trial"""

    t: np.ndarray
    pos: np.ndarray
    meta: TrialMeta

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=float).reshape(-1, 3))

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_samples(cls, samples, meta):
        samples = list(samples)
        t = [s.t for s in samples]
        pos = [s.pos for s in samples]
        return cls(np.array(t, dtype=float), np.array(pos, dtype=float), meta)

    def samples(self) -> Iterator[Sample]:
        for t, p in zip(self.t, self.pos):
            yield Sample(float(t), (float(p[0]), float(p[1]), float(p[2])))

    @property
    def nominal_dt(self):
        return float(np.median(np.diff(self.t)))

    @property
    def sample_rate_hz(self):
        return 1.0 / self.nominal_dt

    def problems(self):
        """Returns a list of human-readable invariant violations (empty when valid)"""
        issues = []
        if len(self.t) < 2:
            issues.append("fewer than 2 samples")
            return issues
        if len(self.t) != len(self.pos):
            issues.append("time and position lengths differ")
            return issues
        if not np.all(np.isfinite(self.t)) or not np.all(np.isfinite(self.pos)):
            issues.append("non-finite time or position")
            return issues
        steps = np.diff(self.t)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 1
            issues.append(f"time not strictly increasing at sample {bad}")
            return issues
        nominal = float(np.median(steps))
        if np.max(np.abs(steps - nominal)) >= 0.1 * nominal:
            issues.append("sampling jitter exceeds 10% of the nominal period")
        previous_end = 0
        for phase in PHASE_ORDER:
            if phase not in self.meta.phases:
                continue
            start, end = self.meta.phases[phase]
            if start < previous_end or end <= start or end > len(self.t):
                issues.append(f"phase '{phase.value}' range {start}:{end} is not contiguous")
            previous_end = end
        return issues

    def validate(self):
        issues = self.problems()
        if issues:
            raise SignalError(f"trial {self.meta.trial_id}: {issues[0]}")
        return self

    def has_phase(self, phase):
        return phase in self.meta.phases

    def phase_slice(self, phase):
        start, end = self.meta.phases[phase]
        return slice(start, end)

    def phase_at(self, index):
        for phase, (start, end) in self.meta.phases.items():
            if start <= index < end:
                return phase
        return None

    def handover_location(self):
        """Where the wrist comes to rest for the handover"""
        if self.has_phase(Phase.HANDOVER):
            return self.pos[self.phase_slice(Phase.HANDOVER)].mean(axis=0)
        if self.has_phase(Phase.CARRY):
            return self.pos[self.meta.phases[Phase.CARRY][1] - 1].copy()
        return self.pos[-1].copy()

    def cup_location(self):
        """Wrist position at the end of the reach, i.e. at the grasped cup"""
        if self.has_phase(Phase.REACH):
            return self.pos[self.meta.phases[Phase.REACH][1] - 1].copy()
        return self.pos[0].copy()


@dataclass(frozen=True)
class VelocityProfile:
    """Sampled end-effector speed norm"""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def duration(self):
        return self.dt * (len(self.values) - 1)

    @property
    def times(self):
        return np.arange(len(self.values)) * self.dt

    def validate(self):
        if self.dt <= 0:
            raise SignalError("profile dt must be positive")
        if len(self.values) < 2:
            raise SignalError("profile needs at least 2 samples")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise SignalError("profile speeds must be finite and non-negative")
        if abs(self.values[0]) > 1e-6 or abs(self.values[-1]) > 1e-6:
            raise SignalError("profile must start and end at rest")
        return self

    def integral(self):
        return float(np.trapezoid(self.values, dx=self.dt)) if hasattr(np, "trapezoid") \
            else float(np.trapz(self.values, dx=self.dt))

    @property
    def peak(self):
        return float(np.max(self.values))

    def speed_at(self, t, time_scale=1.0):
        """Interpolated speed at time t on a time axis stretched by time_scale"""
        if t < 0 or t > self.duration * time_scale:
            return 0.0
        return float(np.interp(t / time_scale, self.times, self.values))
