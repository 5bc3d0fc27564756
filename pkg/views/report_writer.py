"""Aggregate report tables.

Every table is computed from the per-trial entries of the classification and
simulation documents, so the report can be checked against a recomputation
from the raw outputs. Tables are written as CSV next to ``report.json``.
"""
import json
import math
import os

import numpy as np
import pandas as pd
from PyQt6.QtCore import QObject, pyqtSignal

from models.classifier import nearest_rank
from models.signal_processing import velocity_profile_summary
from models.trajectory import CarefulnessLabel, Phase

# A decision counts as early when it lands at least this long before the stream ends
EARLY_MARGIN_S = 0.4
FLOAT_FORMAT = "%.12g"

LABELS = [label.value for label in CarefulnessLabel]


def _mean(values):
    return float(np.mean(values)) if len(values) else float("nan")


def accuracy_rows(phase, trials):
    rows = []
    for label in LABELS:
        mine = [t for t in trials if t["truth"] == label]
        correct = sum(1 for t in mine if t["correct"])
        rows.append({
            "phase": phase,
            "label": label,
            "n_trials": len(mine),
            "correct": correct,
            "undecided": sum(1 for t in mine if t["decision"] == "undecided"),
            "accuracy": correct / len(mine) if mine else float("nan"),
        })
    return rows


def latency_rows(phase, trials, dt):
    """Decision step percentiles over correctly classified trials"""
    rows = []
    for label in LABELS:
        correct = [t for t in trials if t["truth"] == label and t["correct"]]
        steps = [t["step"] for t in correct]
        early = [t for t in correct if t["margin"] * dt >= EARLY_MARGIN_S - 1e-12]
        p97 = nearest_rank(steps, 97)
        rows.append({
            "phase": phase,
            "label": label,
            "n_correct": len(correct),
            "p50_step": nearest_rank(steps, 50),
            "p97_step": p97,
            "p97_time": p97 * dt if p97 is not None else None,
            "mean_margin_steps": _mean([t["margin"] for t in correct]),
            "early_fraction": len(early) / len(correct) if correct else float("nan"),
        })
    return rows


def classification_rows(phase, trials):
    return [dict(phase=phase, **{k: t[k] for k in ("trial_id", "truth", "decision", "step", "time",
                                                    "n_steps", "margin", "correct")})
            for t in trials]


def decided_fraction_rows(phase, curves):
    rows = []
    for label in LABELS:
        curve = curves.get(label)
        if not curve:
            continue
        for step, mean, lower, upper in zip(curve["step"], curve["mean"], curve["lower"], curve["upper"]):
            rows.append({"phase": phase, "label": label, "step": step,
                         "mean": mean, "lower": lower, "upper": upper})
    return rows


def block_rows(blocks):
    return [{
        "block_id": b["block_id"],
        "condition": b["condition"],
        "total_time": b["total_time"],
        "robot_time": b["robot_time"],
        "net_human_time": b["net_human_time"],
        "spills": sum(1 for t in b["trials"] if t["spill"]),
    } for b in sorted(blocks, key=lambda b: b["block_id"])]


def net_time_rows(blocks):
    """Per-condition means of block durations and per-cup robot busy time"""
    rows = []
    for condition in sorted({b["condition"] for b in blocks}):
        mine = [b for b in blocks if b["condition"] == condition]
        trials = [t for b in mine for t in b["trials"]]
        rows.append({
            "condition": condition,
            "n_blocks": len(mine),
            "total_time_mean": _mean([b["total_time"] for b in mine]),
            "robot_time_mean": _mean([b["robot_time"] for b in mine]),
            "net_human_time_mean": _mean([b["net_human_time"] for b in mine]),
            "busy_empty_mean": _mean([t["busy_time"] for t in trials if t["cup"] == "empty"]),
            "busy_full_mean": _mean([t["busy_time"] for t in trials if t["cup"] == "full"]),
            "spills": sum(1 for t in trials if t["spill"]),
        })
    return rows


def velocity_profile_rows(dataset, cutoff_hz=8.0):
    """Mean and std wrist speed per label for the reach and carry phases"""
    rows = []
    for phase in (Phase.REACH, Phase.CARRY):
        trajectories = [traj for traj in dataset if traj.has_phase(phase)]
        if not trajectories:
            continue
        summary = velocity_profile_summary(trajectories, [phase], cutoff_hz=cutoff_hz)
        for label in CarefulnessLabel:
            if label not in summary:
                continue
            mean, std = summary[label]
            duration = mean.t[-1] - mean.t[0]
            for index, (t, m, s) in enumerate(zip(mean.t - mean.t[0], mean.value, std.value)):
                rows.append({"phase": phase.value, "label": label.value, "sample": index,
                             "progress": t / duration if duration > 0 else 0.0,
                             "t": t, "mean": m, "std": s})
    return rows


def _clean(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


class ReportWriter(QObject):
    """Writes report.json and the plot-ready CSV tables into one directory"""

    log = pyqtSignal(str, str)

    def __init__(self, output_dir, dt=1.0 / 120.0):
        super().__init__()
        self.output_dir = output_dir
        self.dt = dt

    def _csv(self, name, rows, columns):
        path = os.path.join(self.output_dir, name)
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format=FLOAT_FORMAT,
                                                   lineterminator="\n", na_rep="")
        self.log.emit("report", f"wrote {path}")
        return name

    def write_all(self, classification, simulation, dataset=()):
        """Computes every table and returns the report document"""
        os.makedirs(self.output_dir, exist_ok=True)
        phases = sorted(classification)
        accuracy, latency, per_trial, decided = [], [], [], []
        for key in phases:
            part = classification[key]
            trials = sorted(part["trials"], key=lambda t: t["trial_id"])
            accuracy += accuracy_rows(part["phase"], trials)
            latency += latency_rows(part["phase"], trials, self.dt)
            per_trial += classification_rows(part["phase"], trials)
            decided += decided_fraction_rows(part["phase"], part.get("decided_fraction", {}))
        blocks = simulation.get("blocks", [])
        durations = block_rows(blocks)
        net_time = net_time_rows(blocks)
        profiles = velocity_profile_rows(dataset) if dataset else []

        files = [
            self._csv("accuracy.csv", accuracy,
                      ["phase", "label", "n_trials", "correct", "undecided", "accuracy"]),
            self._csv("decision_latency.csv", latency,
                      ["phase", "label", "n_correct", "p50_step", "p97_step", "p97_time",
                       "mean_margin_steps", "early_fraction"]),
            self._csv("net_time.csv", net_time,
                      ["condition", "n_blocks", "total_time_mean", "robot_time_mean", "net_human_time_mean",
                       "busy_empty_mean", "busy_full_mean", "spills"]),
            self._csv("velocity_profiles.csv", profiles,
                      ["phase", "label", "sample", "progress", "t", "mean", "std"]),
            self._csv("classification.csv", per_trial,
                      ["phase", "trial_id", "truth", "decision", "step", "time", "n_steps", "margin", "correct"]),
            self._csv("decided_fraction.csv", decided, ["phase", "label", "step", "mean", "lower", "upper"]),
            self._csv("block_durations.csv", durations,
                      ["block_id", "condition", "total_time", "robot_time", "net_human_time", "spills"]),
        ]

        report = _clean({
            "accuracy": {f"{r['phase']}/{r['label']}": r["accuracy"] for r in accuracy},
            "p97_decision_step": {f"{r['phase']}/{r['label']}": r["p97_step"] for r in latency},
            "early_fraction": {f"{r['phase']}/{r['label']}": r["early_fraction"] for r in latency},
            "net_time": {r["condition"]: {k: v for k, v in r.items() if k != "condition"} for r in net_time},
            "files": sorted(files),
        })
        path = os.path.join(self.output_dir, "report.json")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        self.log.emit("report", f"wrote {path}")
        return report
