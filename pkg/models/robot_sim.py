"""Kinematic simulation of the receiving robot.

The end-effector is a Cartesian point under velocity control at 40 Hz. After
the handover it carries the cup to the bucket and pours (full cups only), then
places it in the drawer. The neutral controller is a saturated proportional
law, the expressive one replays a carefulness-specific speed profile along
each straight segment.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from PyQt6.QtCore import QObject, pyqtSignal

from models.classifier import BeliefClassifier, ClassifierConfig
from models.errors import (BlockPreconditionError, HandoverTimeoutError, InvalidPathError,
                           SimulationError, UsageError)
from models.signal_processing import FilterSpec, derivative, distance_series, lowpass_butter2
from models.synth import MinJerkParams, min_jerk, synth_trial
from models.trajectory import CarefulnessLabel, Condition, CupContent, label_for_cup

# Neutral segments end once the gripper is this close to its target
ARRIVAL_TOLERANCE = 1e-3


class HandoverState(Enum):
    WAITING_HUMAN = "waiting_human"
    GRASP = "grasp"
    TRANSPORT_TO_BUCKET = "transport_to_bucket"
    POUR = "pour"
    TRANSPORT_TO_DRAWER = "transport_to_drawer"
    RELEASE = "release"


STATE_SEQUENCE = {
    CupContent.FULL: (HandoverState.WAITING_HUMAN, HandoverState.GRASP, HandoverState.TRANSPORT_TO_BUCKET,
                      HandoverState.POUR, HandoverState.TRANSPORT_TO_DRAWER, HandoverState.RELEASE),
    CupContent.EMPTY: (HandoverState.WAITING_HUMAN, HandoverState.GRASP,
                       HandoverState.TRANSPORT_TO_DRAWER, HandoverState.RELEASE),
}


def _vector(value):
    return np.asarray(value, dtype=float).reshape(3)


@dataclass(frozen=True)
class EndEffectorState:
    pos: np.ndarray
    vel: np.ndarray
    t: float = 0.0
    holding: Optional[CupContent] = None

    def __post_init__(self):
        object.__setattr__(self, "pos", _vector(self.pos))
        object.__setattr__(self, "vel", _vector(self.vel))

    @classmethod
    def at_rest(cls, pos, t=0.0):
        return cls(pos, np.zeros(3), t)


@dataclass(frozen=True)
class NeutralSpec:
    k_p: float = 6.0
    v_const: float = 0.25
    # slew-rate limit on the commanded velocity, None disables
    accel_limit: Optional[float] = 2.0

    def validate(self):
        if not self.k_p > 0 or not self.v_const > 0:
            raise UsageError("neutral gain and constant speed must be positive")
        if self.accel_limit is not None and not self.accel_limit > 0:
            raise UsageError("neutral acceleration limit must be positive")
        return self


@dataclass(frozen=True)
class ExpressiveSpec:
    careful: object = field(default_factory=lambda: min_jerk(MinJerkParams(0.5, 4.0)))
    not_careful: object = field(default_factory=lambda: min_jerk(MinJerkParams(0.5, 1.2)))

    def validate(self):
        self.careful.validate()
        self.not_careful.validate()
        return self

    def profile_for(self, label):
        return self.careful if label is CarefulnessLabel.CAREFUL else self.not_careful


@dataclass(frozen=True)
class TaskGeometry:
    handover_zone: Tuple[float, float, float] = (0.45, 0.0, 0.25)
    bucket: Tuple[float, float, float] = (0.45, 0.5, 0.25)
    drawer: Tuple[float, float, float] = (0.45, 0.8, 0.25)
    grasp_trigger: float = 0.05
    pour_dwell: float = 2.0

    def validate(self):
        points = [_vector(self.handover_zone), _vector(self.bucket), _vector(self.drawer)]
        for i in range(3):
            for j in range(i + 1, 3):
                if np.linalg.norm(points[i] - points[j]) == 0:
                    raise UsageError("handover zone, bucket and drawer must be distinct")
        if not self.grasp_trigger > 0:
            raise UsageError("grasp trigger distance must be positive")
        if self.pour_dwell < 0:
            raise UsageError("pour dwell must be non-negative")
        return self


@dataclass(frozen=True)
class SimConfig:
    tick_hz: float = 40.0
    speed_cap: float = 1.5
    spill_accel: float = 2.5
    human_timeout: float = 10.0
    # hard stop for a single robot segment
    segment_timeout: float = 30.0

    @property
    def dt(self):
        return 1.0 / self.tick_hz

    def validate(self):
        if not self.tick_hz > 0 or not self.speed_cap > 0 or not self.spill_accel > 0:
            raise UsageError("tick rate, speed cap and spill bound must be positive")
        if not self.human_timeout > 0 or not self.segment_timeout > 0:
            raise UsageError("timeouts must be positive")
        return self


def neutral_command(state, target, spec, dt=None):
    """Saturated proportional velocity towards target.

    When dt is given and the spec has an acceleration limit, the change from
    the current velocity is limited to accel_limit * dt.
    """
    error = _vector(target) - state.pos
    distance = float(np.linalg.norm(error))
    if distance < ARRIVAL_TOLERANCE:
        cmd = np.zeros(3)
    else:
        cmd = error / distance * min(spec.k_p * distance, spec.v_const)
    if dt is not None and spec.accel_limit is not None:
        change = cmd - state.vel
        max_change = spec.accel_limit * dt
        norm = float(np.linalg.norm(change))
        if norm > max_change:
            cmd = state.vel + change * (max_change / norm)
    return cmd


def time_scale(path_start, path_end, profile):
    """Stretch of the profile time axis so that its integral covers the path"""
    length = float(np.linalg.norm(_vector(path_end) - _vector(path_start)))
    if length == 0.0:
        raise InvalidPathError("expressive path has zero length")
    return length / profile.integral()


def expressive_command(state, path_start, path_end, profile, elapsed):
    """Profile speed at elapsed along the straight path; zero after the profile ends"""
    if elapsed < 0:
        raise SimulationError(f"elapsed time must be non-negative, got {elapsed}")
    start, end = _vector(path_start), _vector(path_end)
    scale = time_scale(start, end, profile)
    direction = (end - start) / np.linalg.norm(end - start)
    return direction * profile.speed_at(elapsed, time_scale=scale)


def step_end_effector(state, cmd, dt=1.0 / 40.0, speed_cap=1.5):
    """Explicit Euler step of the velocity-controlled end-effector"""
    cmd = _vector(cmd)
    speed = float(np.linalg.norm(cmd))
    if speed > speed_cap:
        cmd = cmd * (speed_cap / speed)
    return EndEffectorState(state.pos + cmd * dt, cmd, state.t + dt, state.holding)


def max_full_cup_accel(trace):
    """Largest finite-difference acceleration while a full cup is held"""
    peak = 0.0
    for previous, current in zip(trace, trace[1:]):
        if previous.holding is not CupContent.FULL or current.holding is not CupContent.FULL:
            continue
        dt = current.t - previous.t
        if dt > 0:
            peak = max(peak, float(np.linalg.norm(current.vel - previous.vel)) / dt)
    return peak


def check_spill(trace, cup=CupContent.FULL, a_max=2.5):
    if cup is not CupContent.FULL:
        return False
    return max_full_cup_accel(trace) > a_max


@dataclass
class TraceRow:
    t: float
    pos: np.ndarray
    vel: np.ndarray
    state: HandoverState
    holding: Optional[CupContent]


@dataclass
class TrialMetrics:
    trial_id: str
    cup: CupContent
    condition: Condition
    handover_ticks: int
    busy_ticks: int
    tick_hz: float
    spill: bool
    max_accel_full: float = 0.0
    states: List[HandoverState] = field(default_factory=list)
    # classifier diagnostics, only when one is attached
    decision: Optional[str] = None
    decision_step: Optional[int] = None
    segment_errors: List[float] = field(default_factory=list)
    trace: List[TraceRow] = field(default_factory=list, repr=False)

    @property
    def handover_time(self):
        return self.handover_ticks / self.tick_hz

    @property
    def busy_time(self):
        return self.busy_ticks / self.tick_hz

    def to_json(self):
        return {
            "trial_id": self.trial_id,
            "cup": self.cup.value,
            "condition": self.condition.value,
            "handover_time": self.handover_time,
            "busy_time": self.busy_time,
            "spill": self.spill,
            "max_accel_full": self.max_accel_full,
            "states": [s.value for s in self.states],
            "decision": self.decision,
            "decision_step": self.decision_step,
        }

    def trace_frame(self):
        """State trace as a table: t,x,y,z,vx,vy,vz,state,holding"""
        return pd.DataFrame([
            {"t": row.t, "x": row.pos[0], "y": row.pos[1], "z": row.pos[2],
             "vx": row.vel[0], "vy": row.vel[1], "vz": row.vel[2], "state": row.state.value,
             "holding": row.holding.value if row.holding is not None else ""}
            for row in self.trace
        ], columns=["t", "x", "y", "z", "vx", "vy", "vz", "state", "holding"])

    def write_trace_csv(self, path):
        self.trace_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


@dataclass
class BlockMetrics:
    block_id: str
    condition: Condition
    trials: List[TrialMetrics]
    latency_ticks: List[int]
    tick_hz: float

    @property
    def total_ticks(self):
        return sum(self.latency_ticks) + sum(t.handover_ticks + t.busy_ticks for t in self.trials)

    @property
    def busy_ticks(self):
        return sum(t.busy_ticks for t in self.trials)

    @property
    def net_ticks(self):
        return self.total_ticks - self.busy_ticks

    @property
    def total_time(self):
        return self.total_ticks / self.tick_hz

    @property
    def robot_time(self):
        return self.busy_ticks / self.tick_hz

    @property
    def net_human_time(self):
        return self.net_ticks / self.tick_hz

    def events(self):
        """Event log of (start, end, kind) segments, kind is 'human' or 'robot'"""
        log, tick = [], 0
        for latency, trial in zip(self.latency_ticks, self.trials):
            human_end = tick + latency + trial.handover_ticks
            log.append((tick / self.tick_hz, human_end / self.tick_hz, "human"))
            tick = human_end + trial.busy_ticks
            log.append((human_end / self.tick_hz, tick / self.tick_hz, "robot"))
        return log

    def to_json(self):
        return {
            "block_id": self.block_id,
            "condition": self.condition.value,
            "total_time": self.total_time,
            "robot_time": self.robot_time,
            "net_human_time": self.net_human_time,
            "trials": [t.to_json() for t in self.trials],
        }


def net_time_from_log(events):
    """Total, net human and robot time of an event log of (start, end, kind) segments"""
    events = list(events)
    if not events:
        return 0.0, 0.0, 0.0
    total = max(end for _, end, _ in events) - min(start for start, _, _ in events)
    robot = sum(end - start for start, end, kind in events if kind == "robot")
    return total, total - robot, robot


def balanced_sequence(rng):
    """Shuffled block of two empty and two full cups"""
    cups = [CupContent.EMPTY, CupContent.EMPTY, CupContent.FULL, CupContent.FULL]
    return [cups[i] for i in rng.permutation(4)]


def human_trial_source(cfg, geometry, seed, zone_jitter=0.02):
    """Callable (index, cup) -> synthetic human trajectory ending near the handover zone"""
    centre = _vector(geometry.handover_zone)

    def make(index, cup):
        seq = np.random.SeedSequence([seed, index])
        jitter_seq, trial_seq = seq.spawn(2)
        offset = np.random.default_rng(jitter_seq).uniform(-zone_jitter, zone_jitter, 3)
        trial_cfg = replace(cfg, handover_location=tuple(float(v) for v in centre + offset))
        return synth_trial(label_for_cup(cup), trial_cfg, trial_seq, trial_id=f"human-{index:04d}")

    return make


class HandoverSimulator(QObject):
    """Runs handover trials through the robot state machine"""

    log = pyqtSignal(str, str)
    state_changed = pyqtSignal(str, str)

    def __init__(self, geometry=None, neutral=None, expressive=None, sim=None,
                 models=None, classifier_cfg=None):
        super().__init__()
        self.geometry = (geometry or TaskGeometry()).validate()
        self.neutral = (neutral or NeutralSpec()).validate()
        self.expressive = (expressive or ExpressiveSpec()).validate()
        self.sim = (sim or SimConfig()).validate()
        self.models = models
        self.classifier_cfg = classifier_cfg or ClassifierConfig()

    def _enter(self, trial_id, state, states):
        states.append(state)
        self.state_changed.emit(trial_id, state.value)

    def run_trial(self, cup, condition, human_traj, trial_id=None):
        trial_id = trial_id or human_traj.meta.trial_id
        dt = self.sim.dt
        zone = _vector(self.geometry.handover_zone)
        robot = EndEffectorState.at_rest(zone)
        trace, states, segment_errors = [], [], []
        tick = 0

        def record(state):
            trace.append(TraceRow(tick * dt, robot.pos.copy(), robot.vel.copy(), state, robot.holding))

        # WaitingHuman: the robot holds still at the zone centre
        self._enter(trial_id, HandoverState.WAITING_HUMAN, states)
        classifier, feed = self._attach_classifier(human_traj, zone)
        fed = 0
        timeout_ticks = int(round(self.sim.human_timeout * self.sim.tick_hz))
        while True:
            now = tick * dt
            if classifier is not None:
                while fed < len(feed) and feed[fed][0] <= now + 1e-12:
                    classifier.push(*feed[fed])
                    fed += 1
            wrist = self._wrist_at(human_traj, now)
            if np.linalg.norm(wrist - robot.pos) < self.geometry.grasp_trigger:
                break
            if tick >= timeout_ticks:
                raise HandoverTimeoutError(
                    f"trial {trial_id}: wrist did not reach the handover zone within {self.sim.human_timeout} s")
            record(HandoverState.WAITING_HUMAN)
            tick += 1
            robot = replace(robot, t=tick * dt)
        handover_tick = tick

        self._enter(trial_id, HandoverState.GRASP, states)
        robot = replace(robot, holding=cup, vel=np.zeros(3))
        record(HandoverState.GRASP)

        if cup is CupContent.FULL:
            self._enter(trial_id, HandoverState.TRANSPORT_TO_BUCKET, states)
            robot, tick = self._transport(robot, tick, self.geometry.bucket, condition,
                                          CarefulnessLabel.CAREFUL, HandoverState.TRANSPORT_TO_BUCKET,
                                          trace, segment_errors)
            self._enter(trial_id, HandoverState.POUR, states)
            for _ in range(int(round(self.geometry.pour_dwell * self.sim.tick_hz))):
                tick += 1
                robot = step_end_effector(robot, np.zeros(3), dt, self.sim.speed_cap)
                record(HandoverState.POUR)
            robot = replace(robot, holding=CupContent.EMPTY)

        self._enter(trial_id, HandoverState.TRANSPORT_TO_DRAWER, states)
        robot, tick = self._transport(robot, tick, self.geometry.drawer, condition,
                                      CarefulnessLabel.NOT_CAREFUL, HandoverState.TRANSPORT_TO_DRAWER,
                                      trace, segment_errors)

        self._enter(trial_id, HandoverState.RELEASE, states)
        tick += 1
        robot = replace(step_end_effector(robot, np.zeros(3), dt, self.sim.speed_cap), holding=None)
        record(HandoverState.RELEASE)

        states_trace = [EndEffectorState(r.pos, r.vel, r.t, r.holding) for r in trace]
        peak_accel = max_full_cup_accel(states_trace)
        metrics = TrialMetrics(
            trial_id=trial_id, cup=cup, condition=condition,
            handover_ticks=handover_tick, busy_ticks=tick - handover_tick, tick_hz=self.sim.tick_hz,
            spill=check_spill(states_trace, cup, self.sim.spill_accel), max_accel_full=peak_accel,
            states=states, segment_errors=segment_errors, trace=trace,
        )
        if classifier is not None:
            metrics.decision = classifier.decision.label_name
            metrics.decision_step = classifier.step_index
        self.log.emit(trial_id, f"{cup.value}/{condition.value}: handover {metrics.handover_time:.3f} s, "
                                f"robot {metrics.busy_time:.3f} s, spill={metrics.spill}")
        return metrics

    def _transport(self, robot, tick, target, condition, label, state, trace, segment_errors):
        dt = self.sim.dt
        target = _vector(target)
        limit = int(round(self.sim.segment_timeout * self.sim.tick_hz))
        start = robot.pos.copy()
        if condition is Condition.EXP:
            profile = self.expressive.profile_for(label)
            duration = profile.duration * time_scale(start, target, profile)
            steps = int(np.ceil(duration / dt)) + 1
            for k in range(steps):
                cmd = expressive_command(robot, start, target, profile, k * dt)
                robot = replace(step_end_effector(robot, cmd, dt, self.sim.speed_cap), t=(tick + 1) * dt)
                tick += 1
                trace.append(TraceRow(tick * dt, robot.pos.copy(), robot.vel.copy(), state, robot.holding))
            segment_errors.append(float(abs(np.linalg.norm(robot.pos - start) - np.linalg.norm(target - start))))
            return robot, tick

        for _ in range(limit):
            if np.linalg.norm(target - robot.pos) < ARRIVAL_TOLERANCE:
                break
            cmd = neutral_command(robot, target, self.neutral, dt)
            robot = replace(step_end_effector(robot, cmd, dt, self.sim.speed_cap), t=(tick + 1) * dt)
            tick += 1
            trace.append(TraceRow(tick * dt, robot.pos.copy(), robot.vel.copy(), state, robot.holding))
        else:
            raise SimulationError(f"neutral segment did not reach {target.tolist()} within "
                                  f"{self.sim.segment_timeout} s")
        segment_errors.append(float(np.linalg.norm(target - robot.pos)))
        return robot, tick

    @staticmethod
    def _wrist_at(traj, t):
        if t >= traj.t[-1]:
            return traj.pos[-1]
        return np.array([np.interp(t, traj.t, traj.pos[:, axis]) for axis in range(3)])

    def _attach_classifier(self, human_traj, zone):
        """Classifier plus its (t, x, xdot) feed, differentiated the same way as classify_online"""
        if self.models is None:
            return None, []
        cfg = replace(self.classifier_cfg, dt=human_traj.nominal_dt)
        classifier = BeliefClassifier(self.models, cfg)
        dist = _distance_to(human_traj, zone, cfg)
        speeds = derivative(dist).value if len(dist) >= 3 else np.zeros(len(dist))
        feed = list(zip(dist.t.tolist(), dist.value.tolist(), speeds.tolist()))
        return classifier, feed

    def run_block(self, cups, condition, human_source, latency=0.0, block_id="block-0"):
        """Four trials back to back; human_source is a callable (index, cup) or a sequence"""
        cups = list(cups)
        if len(cups) != 4 or cups.count(CupContent.FULL) != 2 or cups.count(CupContent.EMPTY) != 2:
            raise BlockPreconditionError("a block needs exactly two empty and two full cups")
        latencies = latency if isinstance(latency, (list, tuple)) else [latency] * 4
        latency_ticks = [int(round(l * self.sim.tick_hz)) for l in latencies]

        trials = []
        for index, cup in enumerate(cups):
            traj = human_source(index, cup) if callable(human_source) else human_source[index]
            trials.append(self.run_trial(cup, condition, traj, trial_id=f"{block_id}-{index}"))
        block = BlockMetrics(block_id, condition, trials, latency_ticks, self.sim.tick_hz)
        self.log.emit(block_id, f"{condition.value}: total {block.total_time:.3f} s, "
                                f"net human {block.net_human_time:.3f} s")
        return block


def _distance_to(traj, point, cfg):
    """Causally filtered distance of the wrist to a fixed point"""
    dist = distance_series(traj, point)
    if cfg.filter_cutoff_hz is not None and len(dist) >= 9:
        dist = lowpass_butter2(dist, FilterSpec(cfg.filter_cutoff_hz, traj.sample_rate_hz))
    return dist
