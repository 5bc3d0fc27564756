"""Per-class Gaussian models of motion in (distance, speed) phase space.

Model file format (``caremodel v1``), one ``key values...`` record per line,
floats written with ``repr`` so a save/load round trip is exact::

    caremodel v1
    class not_careful
    n_points <int>
    mean <x> <xdot>
    covariance <s_xx> <s_xxdot> <s_xdotx> <s_xdotxdot>
    eigenvalues <lambda1> <lambda2>
    eigenvector <v_x> <v_xdot>
    slope <Y>
    end
    class careful
    ...
    end

The not-careful block always comes first. On load the eigen-decomposition is
recomputed from the covariance and must agree with the stored values.
"""
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Tuple

import numpy as np

from models.errors import (DegenerateModelError, MissingLabelError, ModelError,
                           ModelValidationError, ParseError, ShortInputError,
                           VerticalDirectionError)
from models.signal_processing import FilterSpec, derivative, distance_series, lowpass_butter2
from models.trajectory import CarefulnessLabel, Phase

MODEL_HEADER = "caremodel v1"
MIN_POINTS = 10
# principal eigenvalue must dominate the minor one by this factor
DOMINANCE_RATIO = 4.0
VERTICAL_TOLERANCE = 1e-6
LOAD_TOLERANCE = 1e-6


class Segment(Enum):
    """Part of a phase the phase points are taken from, split at the speed peak"""

    ONSET = "onset"
    APPROACH = "approach"
    WHOLE = "whole"


class PhasePoint(NamedTuple):
    x: float
    xdot: float


def eigen_2x2(cov):
    """Closed-form eigen-decomposition of a symmetric 2x2 matrix.

    Returns (lambda1, lambda2, (v_x, v_xdot)) with lambda1 >= lambda2 and the
    unit principal eigenvector oriented so that v_x >= 0.
    """
    a, b, c = float(cov[0][0]), float(0.5 * (cov[0][1] + cov[1][0])), float(cov[1][1])
    mid = 0.5 * (a + c)
    radius = math.hypot(0.5 * (a - c), b)
    lambda1, lambda2 = mid + radius, mid - radius

    # two candidate eigenvectors, the longer one is better conditioned
    first = (b, lambda1 - a)
    second = (lambda1 - c, b)
    vx, vy = first if math.hypot(*first) >= math.hypot(*second) else second
    norm = math.hypot(vx, vy)
    if norm == 0.0:
        vx, vy = 1.0, 0.0
    else:
        vx, vy = vx / norm, vy / norm
    if vx < 0 or (vx == 0 and vy < 0):
        vx, vy = -vx, -vy
    return lambda1, lambda2, (vx, vy)


@dataclass(frozen=True)
class BehaviorModel:
    label: CarefulnessLabel
    mean: Tuple[float, float]
    covariance: Tuple[Tuple[float, float], Tuple[float, float]]
    eigenvalues: Tuple[float, float]
    # principal eigenvector as (v_x, v_xdot)
    eigenvector: Tuple[float, float]
    n_points: int = 0

    @property
    def slope(self):
        """Y = v_xdot / v_x, in 1/s"""
        return self.eigenvector[1] / self.eigenvector[0]

    @property
    def covariance_matrix(self):
        return np.array(self.covariance, dtype=float)

    def validate(self, tolerance=1e-9):
        cov = self.covariance_matrix
        if not np.all(np.isfinite(cov)) or cov[0, 1] != cov[1, 0]:
            raise ModelValidationError(f"{self.label.value}: covariance must be finite and symmetric")
        lambda1, lambda2 = self.eigenvalues
        scale = max(1.0, abs(lambda1))
        if lambda1 < lambda2 or lambda2 < -tolerance * scale:
            raise ModelValidationError(f"{self.label.value}: covariance is not positive semi-definite")
        v = np.array(self.eigenvector, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > tolerance:
            raise ModelValidationError(f"{self.label.value}: eigenvector is not unit norm")
        if np.max(np.abs(cov @ v - lambda1 * v)) > tolerance * scale:
            raise ModelValidationError(f"{self.label.value}: eigenvector does not match the covariance")
        if abs(v[0]) < VERTICAL_TOLERANCE or not math.isfinite(self.slope):
            raise ModelValidationError(f"{self.label.value}: slope is not finite")
        return self


@dataclass(frozen=True)
class ModelPair:
    """Index 1 is the not-careful model, index 2 the careful one"""

    not_careful: BehaviorModel
    careful: BehaviorModel

    def __post_init__(self):
        if self.not_careful.label is not CarefulnessLabel.NOT_CAREFUL or \
                self.careful.label is not CarefulnessLabel.CAREFUL:
            raise ModelValidationError("model pair must hold one not-careful and one careful model")

    @property
    def models(self):
        return self.not_careful, self.careful

    @property
    def slopes(self):
        return self.not_careful.slope, self.careful.slope


def phase_points(dist):
    """(x, xdot) pairs of a distance series, endpoints excluded"""
    if len(dist) < 3:
        raise ShortInputError("phase points need at least 3 samples")
    speed = derivative(dist)
    return [PhasePoint(float(x), float(v)) for x, v in zip(dist.value[1:-1], speed.value[1:-1])]


def fit_behavior(points, label):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) < MIN_POINTS:
        raise ModelError(f"{label.value}: need at least {MIN_POINTS} phase points, got {len(points)}")
    if not np.all(np.isfinite(points)):
        raise ModelError(f"{label.value}: phase points must be finite")
    if np.all(points == points[0]):
        raise DegenerateModelError(f"{label.value}: all phase points are identical")

    mean = points.mean(axis=0)
    cov = np.cov(points, rowvar=False, ddof=1)
    lambda1, lambda2, v = eigen_2x2(cov)
    floor = max(lambda2, np.finfo(float).eps * max(abs(lambda1), np.finfo(float).tiny))
    if lambda1 / floor < DOMINANCE_RATIO:
        raise DegenerateModelError(
            f"{label.value}: no dominant direction (eigenvalues {lambda1:.6g}, {lambda2:.6g})")
    if abs(v[0]) < VERTICAL_TOLERANCE:
        raise VerticalDirectionError(f"{label.value}: principal direction is vertical")

    return BehaviorModel(
        label=label,
        mean=(float(mean[0]), float(mean[1])),
        covariance=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[0, 1]), float(cov[1, 1]))),
        eigenvalues=(float(lambda1), float(max(lambda2, 0.0))),
        eigenvector=(float(v[0]), float(v[1])),
        n_points=len(points),
    )


def trial_phase_points(traj, target=None, phase=Phase.CARRY, segment=Segment.ONSET, cutoff_hz=8.0):
    """Phase points of one trial inside one phase.

    The distance to the target is optionally low-pass filtered (zero phase)
    over the whole trial before differentiation. ONSET keeps the samples up
    to the speed peak of the phase, APPROACH the samples from the peak on.
    Onset distances are taken relative to the first onset sample, so every
    trial starts at x = 0 whatever its length; slopes are unchanged by the
    shift.
    """
    if not traj.has_phase(phase):
        return []
    target = traj.handover_location() if target is None else target
    dist = distance_series(traj, target)
    if cutoff_hz is not None:
        dist = lowpass_butter2(dist, FilterSpec(cutoff_hz, traj.sample_rate_hz), zero_phase=True)
    speed = derivative(dist)

    start, end = traj.meta.phases[phase]
    # trial endpoints have one-sided derivatives only
    start, end = max(start, 1), min(end, len(dist) - 1)
    if end <= start:
        return []
    peak = start + int(np.argmax(np.abs(speed.value[start:end])))
    offset = 0.0
    if segment is Segment.ONSET:
        end, offset = peak, dist.value[start]
    elif segment is Segment.APPROACH:
        start = peak
    return [PhasePoint(float(x - offset), float(v))
            for x, v in zip(dist.value[start:end], speed.value[start:end])]


def fit_pair(dataset, handover_target=None, phase=Phase.CARRY, include_reach=False,
             segment=Segment.ONSET, cutoff_hz=8.0):
    """Fit one model per label from the pooled phase points of a labeled dataset"""
    pooled = {label: [] for label in CarefulnessLabel}
    for traj in dataset:
        points = pooled[traj.meta.label]
        points.extend(trial_phase_points(traj, handover_target, phase, segment, cutoff_hz))
        if include_reach and phase is not Phase.REACH:
            points.extend(trial_phase_points(traj, handover_target, Phase.REACH, segment, cutoff_hz))

    missing = [label.value for label, points in pooled.items() if not points]
    if missing:
        raise MissingLabelError(f"dataset has no {', '.join(missing)} trials in phase '{phase.value}'")
    return ModelPair(
        not_careful=fit_behavior(pooled[CarefulnessLabel.NOT_CAREFUL], CarefulnessLabel.NOT_CAREFUL),
        careful=fit_behavior(pooled[CarefulnessLabel.CAREFUL], CarefulnessLabel.CAREFUL),
    )


def _format(values):
    return " ".join(repr(float(v)) for v in values)


def dumps_model(pair):
    lines = [MODEL_HEADER]
    for model in pair.models:
        cov = model.covariance
        lines += [
            f"class {model.label.value}",
            f"n_points {model.n_points}",
            f"mean {_format(model.mean)}",
            f"covariance {_format((cov[0][0], cov[0][1], cov[1][0], cov[1][1]))}",
            f"eigenvalues {_format(model.eigenvalues)}",
            f"eigenvector {_format(model.eigenvector)}",
            f"slope {_format((model.slope,))}",
            "end",
        ]
    return "\n".join(lines) + "\n"


def save_model(pair, path):
    Path(path).write_text(dumps_model(pair), encoding="utf-8")


_BLOCK_KEYS = ("n_points", "mean", "covariance", "eigenvalues", "eigenvector", "slope")
_BLOCK_SIZES = {"n_points": 1, "mean": 2, "covariance": 4, "eigenvalues": 2, "eigenvector": 2, "slope": 1}


def _parse_block(lines, start):
    """Parse one class block starting at lines[start]; returns (model, next index)"""
    if start >= len(lines):
        raise ParseError("file truncated, expected a class block", line=start + 1)
    key, _, value = lines[start].partition(" ")
    if key != "class":
        raise ParseError(f"expected 'class', found '{key}'", line=start + 1)
    try:
        label = CarefulnessLabel(value.strip())
    except ValueError:
        raise ParseError(f"unknown class label '{value.strip()}'", line=start + 1)

    fields = {}
    for offset, expected in enumerate(_BLOCK_KEYS, start=1):
        index = start + offset
        if index >= len(lines):
            raise ParseError(f"file truncated, expected '{expected}'", line=index + 1)
        parts = lines[index].split()
        if not parts or parts[0] != expected:
            raise ParseError(f"expected '{expected}'", line=index + 1)
        if len(parts) - 1 != _BLOCK_SIZES[expected]:
            raise ParseError(f"'{expected}' needs {_BLOCK_SIZES[expected]} values", line=index + 1)
        try:
            fields[expected] = [int(parts[1])] if expected == "n_points" else [float(p) for p in parts[1:]]
        except ValueError:
            raise ParseError(f"malformed number in '{expected}'", line=index + 1)
    end_index = start + len(_BLOCK_KEYS) + 1
    if end_index >= len(lines) or lines[end_index].strip() != "end":
        raise ParseError("file truncated, expected 'end'", line=end_index + 1)

    cov = fields["covariance"]
    model = BehaviorModel(
        label=label,
        mean=tuple(fields["mean"]),
        covariance=((cov[0], cov[1]), (cov[2], cov[3])),
        eigenvalues=tuple(fields["eigenvalues"]),
        eigenvector=tuple(fields["eigenvector"]),
        n_points=fields["n_points"][0],
    )
    _check_against_covariance(model, fields["slope"][0])
    return model, end_index + 1


def _check_against_covariance(model, stored_slope):
    lambda1, lambda2, v = eigen_2x2(model.covariance)
    stored = np.array(model.eigenvalues + model.eigenvector + (stored_slope,))
    recomputed = np.array((lambda1, max(lambda2, 0.0)) + v + (v[1] / v[0] if v[0] else math.inf,))
    if not np.allclose(stored, recomputed, rtol=LOAD_TOLERANCE, atol=LOAD_TOLERANCE):
        raise ModelValidationError(
            f"{model.label.value}: stored eigen-decomposition does not match the covariance")
    model.validate(tolerance=LOAD_TOLERANCE)


def loads_model(text):
    lines = [line.strip() for line in text.rstrip().splitlines()]
    if not lines:
        raise ParseError("empty model file", line=1)
    if not lines[0].startswith("caremodel"):
        raise ParseError("missing 'caremodel' header", line=1)
    if lines[0] != MODEL_HEADER:
        raise ModelError(f"unsupported model version '{lines[0]}', expected '{MODEL_HEADER}'")

    first, index = _parse_block(lines, 1)
    second, index = _parse_block(lines, index)
    if index != len(lines):
        raise ParseError("unexpected content after the second class block", line=index + 1)
    by_label = {first.label: first, second.label: second}
    if len(by_label) != 2:
        raise ModelValidationError("model file must hold one block per label")
    return ModelPair(not_careful=by_label[CarefulnessLabel.NOT_CAREFUL],
                     careful=by_label[CarefulnessLabel.CAREFUL])


def load_model(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read model file {path}: {e}")
    return loads_model(text)
