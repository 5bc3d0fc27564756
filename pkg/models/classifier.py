"""Online carefulness detection with a two-hypothesis belief system.

Every new distance sample yields a slope observation X = dxdot / dx in phase
space. The observation is compared with the belief-weighted slopes of the two
behaviour models and the beliefs are integrated one Euler step towards the
model that explains it. A decision latches the first time either belief
reaches the threshold.

Observations only count once the wrist has started to move: until the speed
first reaches the gate speed every step is skipped.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional

import numpy as np
import pandas as pd

from models.errors import NonUniformSeriesError, ShortInputError, SignalError, UsageError
from models.signal_processing import FilterSpec, derivative, distance_series, lowpass_butter2
from models.trajectory import CarefulnessLabel, Phase

# slope_observation returns this when the wrist barely moved
SKIP = None


class UpdateRule(Enum):
    ERROR_PROJECTED = "error_projected"
    SHARED_ERROR = "shared_error"


class Target(Enum):
    HANDOVER = "handover"
    CUP = "cup"


@dataclass(frozen=True)
class BeliefState:
    b1: float = 0.5  # not careful
    b2: float = 0.5  # careful

    def validate(self):
        if not (0.0 <= self.b1 <= 1.0 and 0.0 <= self.b2 <= 1.0) or abs(self.b1 + self.b2 - 1.0) > 1e-9:
            raise SignalError(f"belief ({self.b1}, {self.b2}) is not on the probability simplex")
        return self

    def leader(self):
        return CarefulnessLabel.CAREFUL if self.b2 > self.b1 else CarefulnessLabel.NOT_CAREFUL

    @property
    def peak(self):
        return max(self.b1, self.b2)


@dataclass(frozen=True)
class ClassifierConfig:
    # belief gain per second of stream
    epsilon: float = 5.0
    dt: float = 1.0 / 120.0
    decision_threshold: float = 0.99
    slope_clip: float = 50.0
    dx_floor: float = 1e-4
    update_rule: UpdateRule = UpdateRule.ERROR_PROJECTED
    # causal low-pass on the distance before classification, None disables
    filter_cutoff_hz: Optional[float] = 8.0
    # observations are skipped until the speed first reaches this value, None disables
    gate_speed: Optional[float] = 0.1

    def validate(self):
        if not self.epsilon > 0:
            raise UsageError(f"epsilon must be positive, got {self.epsilon}")
        if not self.dt > 0:
            raise UsageError(f"dt must be positive, got {self.dt}")
        if not 0.5 < self.decision_threshold <= 1.0:
            raise UsageError(f"decision threshold must lie in (0.5, 1], got {self.decision_threshold}")
        if not self.slope_clip > 0 or not self.dx_floor > 0:
            raise UsageError("slope clip and dx floor must be positive")
        if self.gate_speed is not None and not self.gate_speed >= 0:
            raise UsageError(f"gate speed must be non-negative, got {self.gate_speed}")
        if self.filter_cutoff_hz is not None:
            FilterSpec(self.filter_cutoff_hz, 1.0 / self.dt).validate()
        return self


class StepRecord(NamedTuple):
    step: int
    t: float
    b1: float
    b2: float
    x_obs: Optional[float]
    error: Optional[float]


@dataclass
class Decision:
    # None while undecided
    label: Optional[CarefulnessLabel]
    step_index: Optional[int]
    time: Optional[float]
    final_beliefs: BeliefState
    trace: List[StepRecord] = field(default_factory=list)

    @property
    def decided(self):
        return self.label is not None

    @property
    def label_name(self):
        return self.label.value if self.label is not None else "undecided"

    @property
    def n_steps(self):
        return len(self.trace)


def slope_observation(x_prev, x_cur, xdot_prev, xdot_cur, cfg):
    """X = dxdot / dx clipped to the configured range, SKIP when dx is tiny"""
    dx = x_cur - x_prev
    if abs(dx) < cfg.dx_floor:
        return SKIP
    x_obs = (xdot_cur - xdot_prev) / dx
    return min(cfg.slope_clip, max(-cfg.slope_clip, x_obs))


def prediction_error(belief, x_obs, slopes):
    y1, y2 = slopes
    return x_obs - (belief.b1 * y1 + belief.b2 * y2)


def _renormalise(raw1, raw2, previous):
    b1 = min(1.0, max(0.0, raw1))
    b2 = min(1.0, max(0.0, raw2))
    total = b1 + b2
    if total == 0.0:
        # both clamped away, fall back to one-hot on the larger raw value
        if raw1 > raw2:
            return BeliefState(1.0, 0.0)
        if raw2 > raw1:
            return BeliefState(0.0, 1.0)
        return previous
    return BeliefState(b1 / total, b2 / total)


def belief_step(belief, x_obs, models, cfg):
    """One Euler step of the belief dynamics followed by clamping and renormalisation.

    models is a ModelPair or a (Y1, Y2) pair of slopes.
    """
    y1, y2 = models.slopes if hasattr(models, "slopes") else models
    e = x_obs - (belief.b1 * y1 + belief.b2 * y2)
    if cfg.update_rule is UpdateRule.ERROR_PROJECTED:
        rate1 = cfg.epsilon * (e * y1 + (belief.b1 - 0.5) * y1 * y1)
        rate2 = cfg.epsilon * (e * y2 + (belief.b2 - 0.5) * y2 * y2)
    else:
        rate1 = cfg.epsilon * (e + (belief.b1 - 0.5) * y1 * y1)
        rate2 = cfg.epsilon * (e + (belief.b2 - 0.5) * y2 * y2)
    return _renormalise(belief.b1 + rate1 * cfg.dt, belief.b2 + rate2 * cfg.dt, belief)


class BeliefClassifier:
    """Per-stream classifier state; one instance per stream.

    models is a ModelPair or a (Y1, Y2) pair of slopes.
    """

    def __init__(self, models, cfg=None):
        self.cfg = (cfg or ClassifierConfig()).validate()
        slopes = models.slopes if hasattr(models, "slopes") else models
        self.slopes = tuple(float(y) for y in slopes)
        self.reset()

    def reset(self):
        self.belief = BeliefState()
        self.trace = []
        self.label = None
        self.step_index = None
        self.decision_time = None
        self._previous = None
        self._step = 0
        self._open = self.cfg.gate_speed is None

    def push(self, t, x, xdot):
        """Feed one (distance, speed) sample; returns the latched label or None"""
        if self._previous is None:
            self._previous = (x, xdot)
            return self.label

        x_prev, xdot_prev = self._previous
        self._previous = (x, xdot)
        self._step += 1
        if not self._open and abs(xdot) >= self.cfg.gate_speed:
            self._open = True
        x_obs = slope_observation(x_prev, x, xdot_prev, xdot, self.cfg) if self._open else SKIP
        error = None
        if x_obs is not SKIP:
            error = prediction_error(self.belief, x_obs, self.slopes)
            self.belief = belief_step(self.belief, x_obs, self.slopes, self.cfg)
        self.trace.append(StepRecord(self._step, float(t), self.belief.b1, self.belief.b2, x_obs, error))

        if self.label is None and self.belief.peak >= self.cfg.decision_threshold:
            self.label = self.belief.leader()
            self.step_index = self._step
            self.decision_time = float(t)
        return self.label

    @property
    def decision(self):
        return Decision(self.label, self.step_index, self.decision_time, self.belief, list(self.trace))


def classify_online(dist, models, cfg=None):
    """Stream a distance series through a fresh classifier"""
    cfg = (cfg or ClassifierConfig()).validate()
    if len(dist) < 2:
        raise ShortInputError("classification needs at least 2 samples")
    if len(dist) >= 3:
        xdot = derivative(dist).value
    else:
        xdot = np.full(2, (dist.value[1] - dist.value[0]) / (dist.t[1] - dist.t[0]))
    if abs(dist.dt - cfg.dt) > 0.1 * cfg.dt:
        raise NonUniformSeriesError(f"series period {dist.dt:.6g} s does not match classifier dt {cfg.dt:.6g} s")

    classifier = BeliefClassifier(models, cfg)
    for t, x, v in zip(dist.t.tolist(), dist.value.tolist(), xdot.tolist()):
        classifier.push(t, x, v)
    return classifier.decision


def trial_distance(traj, cfg, target=Target.HANDOVER):
    """Distance of a trial to its target, causally filtered when configured"""
    point = traj.cup_location() if target is Target.CUP else traj.handover_location()
    dist = distance_series(traj, point)
    if cfg.filter_cutoff_hz is not None:
        dist = lowpass_butter2(dist, FilterSpec(cfg.filter_cutoff_hz, traj.sample_rate_hz))
    return dist


@dataclass
class TrialOutcome:
    trial_id: str
    truth: CarefulnessLabel
    decision: Decision

    @property
    def correct(self):
        return self.decision.label is self.truth

    @property
    def margin(self):
        """Steps left in the stream after the decision"""
        return self.decision.n_steps - self.decision.step_index if self.decision.decided else None


def evaluate_trial(traj, models, cfg, phase=Phase.CARRY, target=Target.HANDOVER):
    if not traj.has_phase(phase):
        raise SignalError(f"trial {traj.meta.trial_id} has no '{phase.value}' phase annotation")
    dist = trial_distance(traj, cfg, target)
    start, end = traj.meta.phases[phase]
    return TrialOutcome(traj.meta.trial_id, traj.meta.label, classify_online(dist.slice(start, end), models, cfg))


def nearest_rank(values, percent):
    """Nearest-rank percentile, None for an empty list"""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(percent / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class DecidedCurve:
    """Fraction of trials decided by each step with a +-1 sigma binomial band"""

    steps: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def decided_fraction(outcomes, n_steps=None):
    if not outcomes:
        return DecidedCurve(*(np.zeros(0) for _ in range(4)))
    n_steps = n_steps or max(o.decision.n_steps for o in outcomes)
    steps = np.arange(n_steps + 1)
    decided_at = np.array([o.decision.step_index if o.decision.decided else np.inf for o in outcomes])
    mean = (decided_at[None, :] <= steps[:, None]).mean(axis=1)
    sigma = np.sqrt(mean * (1.0 - mean) / len(outcomes))
    return DecidedCurve(steps, mean, np.clip(mean - sigma, 0.0, 1.0), np.clip(mean + sigma, 0.0, 1.0))


@dataclass
class EvalReport:
    phase: Phase
    outcomes: List[TrialOutcome]
    accuracy: Dict[CarefulnessLabel, float]
    undecided: Dict[CarefulnessLabel, int]
    decision_steps: Dict[CarefulnessLabel, List[int]]
    p97_steps: Dict[CarefulnessLabel, Optional[int]]
    curves: Dict[CarefulnessLabel, DecidedCurve]

    def to_json(self):
        def per_label(mapping):
            return {label.value: value for label, value in mapping.items()}

        return {
            "phase": self.phase.value,
            "n_trials": len(self.outcomes),
            "accuracy": per_label(self.accuracy),
            "undecided": per_label(self.undecided),
            "p97_decision_step": per_label(self.p97_steps),
            "decision_steps": per_label(self.decision_steps),
            "decided_fraction": {
                label.value: {
                    "step": curve.steps.tolist(),
                    "mean": curve.mean.tolist(),
                    "lower": curve.lower.tolist(),
                    "upper": curve.upper.tolist(),
                }
                for label, curve in self.curves.items()
            },
            "trials": [
                {
                    "trial_id": o.trial_id,
                    "truth": o.truth.value,
                    "decision": o.decision.label_name,
                    "step": o.decision.step_index,
                    "time": o.decision.time,
                    "n_steps": o.decision.n_steps,
                    "margin": o.margin,
                    "correct": o.correct,
                }
                for o in self.outcomes
            ],
        }


def summarize(outcomes, phase):
    """Aggregate per-trial outcomes; outcomes are ordered by trial id"""
    outcomes = sorted(outcomes, key=lambda o: o.trial_id)
    accuracy, undecided, steps, p97, curves = {}, {}, {}, {}, {}
    for label in CarefulnessLabel:
        mine = [o for o in outcomes if o.truth is label]
        accuracy[label] = sum(o.correct for o in mine) / len(mine) if mine else float("nan")
        undecided[label] = sum(not o.decision.decided for o in mine)
        steps[label] = [o.decision.step_index for o in mine if o.decision.decided]
        p97[label] = nearest_rank([o.decision.step_index for o in mine if o.correct], 97)
        curves[label] = decided_fraction(mine)
    return EvalReport(phase, outcomes, accuracy, undecided, steps, p97, curves)


def evaluate(dataset, models, cfg=None, phase=Phase.CARRY, target=Target.HANDOVER):
    cfg = (cfg or ClassifierConfig()).validate()
    dataset = list(dataset)
    if not dataset:
        raise UsageError("cannot evaluate an empty dataset")
    return summarize([evaluate_trial(traj, models, cfg, phase, target) for traj in dataset], phase)


def trace_frame(decision):
    """Belief trace as a table; skipped steps have empty X and e"""
    return pd.DataFrame(decision.trace, columns=["step", "t", "b1", "b2", "X", "e"])


def write_trace_csv(decision, path):
    trace_frame(decision).to_csv(path, index=False, na_rep="", float_format="%.17g")
