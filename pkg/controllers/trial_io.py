"""Trial record CSV files.

One row per wrist sample, grouped by trial:

    trial_id,t,x,y,z,phase,cup,condition

``t`` in seconds and ``x,y,z`` in metres, ``phase`` one of pre, reach,
carry, handover (empty for unannotated samples), ``cup`` one of empty,
full and ``condition`` one of neu, exp. Comma separated, header required,
UTF-8, '.' as decimal separator.
"""
import os
from typing import List, NamedTuple, Tuple

import numpy as np
import pandas as pd

from models.errors import ParseError, UsageError
from models.trajectory import Condition, CupContent, Phase, TrialMeta, Trajectory

COLUMNS = ["trial_id", "t", "x", "y", "z", "phase", "cup", "condition"]
NUMERIC_COLUMNS = ["t", "x", "y", "z"]

_CHOICES = {
    "phase": {p.value for p in Phase} | {""},
    "cup": {c.value for c in CupContent},
    "condition": {c.value for c in Condition},
}


class TrialSet(NamedTuple):
    trajectories: List[Trajectory]
    # (trial_id, reason) for every trial that failed validation
    rejected: List[Tuple[str, str]]


def _line(row_index):
    # header is line 1
    return int(row_index) + 2


def _read_frame(path):
    if not os.path.exists(path):
        raise UsageError(f"trial file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty, a header is required", line=1) from None
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed row: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"file is not UTF-8: {exc}") from None

    missing = [c for c in COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", line=1)
    frame = frame[COLUMNS].fillna("").copy()

    for column in NUMERIC_COLUMNS:
        values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = values.isna() | ~np.isfinite(values)
        if bad.any():
            index = bad.idxmax()
            raise ParseError(f"column '{column}' is not a finite number: '{frame.at[index, column]}'",
                             line=_line(index))
        frame[column] = values.astype(float)

    for column, choices in _CHOICES.items():
        frame[column] = frame[column].str.strip().str.lower()
        bad = ~frame[column].isin(choices)
        if bad.any():
            index = bad.idxmax()
            raise ParseError(f"unknown {column} '{frame.at[index, column]}'", line=_line(index))

    frame["trial_id"] = frame["trial_id"].str.strip()
    empty = frame["trial_id"] == ""
    if empty.any():
        raise ParseError("empty trial_id", line=_line(empty.idxmax()))
    return frame


def _phase_ranges(labels):
    """Contiguous index ranges per phase label; raises ValueError when a phase is split"""
    phases = {}
    start = 0
    for index in range(1, len(labels) + 1):
        if index < len(labels) and labels[index] == labels[start]:
            continue
        if labels[start]:
            phase = Phase(labels[start])
            if phase in phases:
                raise ValueError(f"phase '{phase.value}' labels are not contiguous")
            phases[phase] = (start, index)
        start = index
    return phases


def _trajectory(trial_id, rows):
    """Trajectory for one trial's rows, or the reason it has to be rejected"""
    for column in ("cup", "condition"):
        if rows[column].nunique() != 1:
            return None, f"{column} changes within the trial"
    try:
        phases = _phase_ranges(rows["phase"].tolist())
    except ValueError as exc:
        return None, str(exc)
    meta = TrialMeta(trial_id=trial_id,
                     cup=CupContent(rows["cup"].iloc[0]),
                     condition=Condition(rows["condition"].iloc[0]),
                     phases=phases)
    traj = Trajectory(rows["t"].to_numpy(dtype=float), rows[["x", "y", "z"]].to_numpy(dtype=float), meta)
    problems = traj.problems()
    if problems:
        return None, problems[0]
    return traj, None


def load_trials(path):
    """Reads a trial record CSV into validated trajectories.

    Malformed rows raise ParseError with their line number. Trials that
    parse but break a trajectory invariant are left out and listed with
    the reason in ``rejected``.
    """
    frame = _read_frame(path)
    trajectories, rejected = [], []
    for trial_id, rows in frame.groupby("trial_id", sort=False):
        traj, reason = _trajectory(trial_id, rows.reset_index(drop=True))
        if traj is None:
            rejected.append((trial_id, reason))
        else:
            trajectories.append(traj)
    return TrialSet(trajectories, rejected)


def trials_frame(dataset):
    """One row per sample of every trajectory, in dataset order"""
    parts = []
    for traj in dataset:
        phase = [""] * len(traj)
        for p, (start, end) in traj.meta.phases.items():
            phase[start:end] = [p.value] * (end - start)
        parts.append(pd.DataFrame({
            "trial_id": traj.meta.trial_id,
            "t": traj.t,
            "x": traj.pos[:, 0],
            "y": traj.pos[:, 1],
            "z": traj.pos[:, 2],
            "phase": phase,
            "cup": traj.meta.cup.value,
            "condition": traj.meta.condition.value,
        }))
    if not parts:
        return pd.DataFrame(columns=COLUMNS)
    return pd.concat(parts, ignore_index=True)[COLUMNS]


def write_trials(dataset, path):
    """Writes trajectories at full precision so load_trials gives them back exactly"""
    trials_frame(dataset).to_csv(path, index=False, float_format="%.17g", lineterminator="\n",
                                 encoding="utf-8")
