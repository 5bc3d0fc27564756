import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Union, get_args, get_origin

from models.classifier import ClassifierConfig, UpdateRule
from models.errors import CareToolkitError, UsageError
from models.robot_sim import ExpressiveSpec, NeutralSpec, SimConfig, TaskGeometry
from models.synth import DurationDistribution, MinJerkParams, SynthConfig, min_jerk

# Offsets added to the run seed for the independent parts of a pipeline run
TRAIN_SEED_OFFSET = 0
EVAL_SEED_OFFSET = 1
SIM_SEED_OFFSET = 2


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; defaults are the documented ones"""

    seed: int = 7
    n_per_label: int = 100
    n_eval_per_label: int = 200
    n_blocks: int = 10
    # seconds between the end of one robot action and the next human approach
    latency: float = 1.0
    workers: int = 4
    output_dir: str = "out"
    write_traces: bool = True
    synth: SynthConfig = field(default_factory=SynthConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    neutral: NeutralSpec = field(default_factory=NeutralSpec)
    expressive: ExpressiveSpec = field(default_factory=ExpressiveSpec)
    geometry: TaskGeometry = field(default_factory=TaskGeometry)
    sim: SimConfig = field(default_factory=SimConfig)

    @property
    def train_seed(self):
        return self.seed + TRAIN_SEED_OFFSET

    @property
    def eval_seed(self):
        return self.seed + EVAL_SEED_OFFSET

    @property
    def sim_seed(self):
        return self.seed + SIM_SEED_OFFSET

    def validate(self):
        """Validates every sub-config; any failure becomes a UsageError"""
        if self.seed < 0:
            raise UsageError(f"seed must be non-negative, got {self.seed}")
        for name in ("n_per_label", "n_eval_per_label", "n_blocks", "workers"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.latency < 0:
            raise UsageError(f"latency must be non-negative, got {self.latency}")
        if not self.output_dir:
            raise UsageError("output directory must not be empty")
        for part in (self.synth, self.classifier, self.neutral, self.expressive, self.geometry, self.sim):
            try:
                part.validate()
            except UsageError:
                raise
            except CareToolkitError as exc:
                raise UsageError(f"invalid {type(part).__name__}: {exc}") from exc
        return self

    def with_overrides(self, **flags):
        """Copy with every flag that is not None applied on top"""
        top = {f.name for f in fields(self)}
        changes, classifier = {}, {}
        for name, value in flags.items():
            if value is None:
                continue
            if name in top:
                changes[name] = value
            elif name in ("epsilon", "decision_threshold", "update_rule", "filter_cutoff_hz", "gate_speed"):
                classifier[name] = _classifier_value(name, value)
            else:
                raise UsageError(f"unknown option '{name}'")
        if classifier:
            changes["classifier"] = replace(self.classifier, **classifier)
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise UsageError("run configuration must be a JSON object")
        sections = {
            "synth": _synth_from_dict,
            "classifier": _classifier_from_dict,
            "neutral": lambda d: _build(NeutralSpec, d, "neutral"),
            "expressive": _expressive_from_dict,
            "geometry": lambda d: _build(TaskGeometry, d, "geometry"),
            "sim": lambda d: _build(SimConfig, d, "sim"),
        }
        kwargs = {}
        scalars = {f.name: f for f in fields(cls) if f.name not in sections}
        for key, value in data.items():
            if key in sections:
                kwargs[key] = sections[key](value)
            elif key in scalars:
                kwargs[key] = _typed(scalars[key], value, key)
            else:
                raise UsageError(f"unknown configuration key '{key}'")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path):
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        """Plain JSON form of the configuration, as written next to the outputs"""
        synth = {f.name: getattr(self.synth, f.name) for f in fields(self.synth)}
        for name in ("transport_duration_not_careful", "transport_duration_careful"):
            synth[name] = {"mean": synth[name].mean, "std": synth[name].std}
        for name in ("handover_location", "transport_direction", "reach_direction"):
            synth[name] = list(synth[name])
        classifier = {f.name: getattr(self.classifier, f.name) for f in fields(self.classifier)}
        classifier["update_rule"] = self.classifier.update_rule.value
        geometry = {f.name: getattr(self.geometry, f.name) for f in fields(self.geometry)}
        for name in ("handover_zone", "bucket", "drawer"):
            geometry[name] = list(geometry[name])
        expressive = {}
        for name in ("careful", "not_careful"):
            profile = getattr(self.expressive, name)
            expressive[name] = {"distance": profile.integral(), "duration": profile.duration}
        return {
            "seed": self.seed,
            "n_per_label": self.n_per_label,
            "n_eval_per_label": self.n_eval_per_label,
            "n_blocks": self.n_blocks,
            "latency": self.latency,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "write_traces": self.write_traces,
            "synth": synth,
            "classifier": classifier,
            "neutral": {f.name: getattr(self.neutral, f.name) for f in fields(self.neutral)},
            "expressive": expressive,
            "geometry": geometry,
            "sim": {f.name: getattr(self.sim, f.name) for f in fields(self.sim)},
        }


def _build(kind, data, section):
    if not isinstance(data, dict):
        raise UsageError(f"configuration section '{section}' must be an object")
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    typed = {f.name: f for f in fields(kind)}
    values = {k: _typed(typed[k], v, f"{section}.{k}") for k, v in data.items()}
    return kind(**values)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _typed(spec, value, where):
    """JSON value checked against the field annotation; ints are accepted where floats are expected"""
    hint = spec.type
    if get_origin(hint) is Union:
        if value is None and type(None) in get_args(hint):
            return None
        hint = next(arg for arg in get_args(hint) if arg is not type(None))
    if hint is bool:
        if isinstance(value, bool):
            return value
        expected = "true or false"
    elif hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        expected = "an integer"
    elif hint is float:
        if _is_number(value):
            return float(value)
        expected = "a number"
    elif hint is str:
        if isinstance(value, str):
            return value
        expected = "a string"
    elif get_origin(hint) is tuple:
        size = len(get_args(hint))
        if isinstance(value, (list, tuple)) and len(value) == size and all(_is_number(v) for v in value):
            return tuple(float(v) for v in value)
        expected = f"a list of {size} numbers"
    else:
        return value
    raise UsageError(f"configuration value '{where}' must be {expected}, got {json.dumps(value)}")


def _duration(value, name):
    if isinstance(value, dict) and set(value) == {"mean", "std"}:
        value = (value["mean"], value["std"])
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(_is_number(v) for v in value):
        return DurationDistribution(float(value[0]), float(value[1]))
    raise UsageError(f"'{name}' must be {{\"mean\", \"std\"}} or a [mean, std] pair")


def _synth_from_dict(data):
    if isinstance(data, dict):
        data = dict(data)
        for name in ("transport_duration_not_careful", "transport_duration_careful"):
            if name in data:
                data[name] = _duration(data[name], name)
    return _build(SynthConfig, data, "synth")


def _classifier_value(name, value):
    if name == "update_rule" and not isinstance(value, UpdateRule):
        try:
            return UpdateRule(value)
        except ValueError:
            choices = ", ".join(r.value for r in UpdateRule)
            raise UsageError(f"update rule must be one of {choices}, got '{value}'") from None
    return value


def _classifier_from_dict(data):
    if isinstance(data, dict) and "update_rule" in data:
        data = dict(data, update_rule=_classifier_value("update_rule", data["update_rule"]))
    return _build(ClassifierConfig, data, "classifier")


def _expressive_from_dict(data):
    if not isinstance(data, dict):
        raise UsageError("configuration section 'expressive' must be an object")
    profiles = {}
    for name, value in data.items():
        if name not in ("careful", "not_careful"):
            raise UsageError(f"unknown key in 'expressive': {name}")
        try:
            profiles[name] = min_jerk(MinJerkParams(float(value["distance"]), float(value["duration"])))
        except (KeyError, TypeError, ValueError):
            raise UsageError(f"expressive '{name}' needs a distance and a duration") from None
        except CareToolkitError as exc:
            raise UsageError(f"invalid expressive '{name}' profile: {exc}") from exc
    return ExpressiveSpec(**profiles)
