import json
import os

import numpy as np
from PyQt6.QtCore import QMutex, QMutexLocker, QObject, QRunnable, QThreadPool, pyqtSignal, pyqtSlot

from controllers.trial_io import load_trials, write_trials
from models.behavior import fit_pair, load_model, save_model
from models.classifier import Target, evaluate_trial, summarize, write_trace_csv
from models.errors import MissingLabelError, UsageError
from models.robot_sim import HandoverSimulator, balanced_sequence, human_trial_source
from models.synth import dataset_plan, synth_trial
from models.trajectory import Condition, Phase
from views.report_writer import ReportWriter

TRAIN_FILE = "train.csv"
EVAL_FILE = "eval.csv"
MODEL_FILE = "model.txt"
CLASSIFICATION_FILE = "classification.json"
SIMULATION_FILE = "simulation.json"
CONFIG_FILE = "config.json"
TRACE_DIR = "traces"
SIM_TRACE_DIR = "sim_traces"


class TrialTask(QRunnable):
    """Runs one unit of per-trial work on the thread pool"""

    def __init__(self, key, work, results, errors, mutex):
        super().__init__()
        self.key = key
        self.work = work
        self.results = results
        self.errors = errors
        self.mutex = mutex

    @pyqtSlot()
    def run(self):
        """Executes the work and stores its result or error under the task key"""
        try:
            result = self.work()
        except Exception as exc:
            with QMutexLocker(self.mutex):
                self.errors[self.key] = exc
            return
        with QMutexLocker(self.mutex):
            self.results[self.key] = result


def write_json(data, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    if not os.path.exists(path):
        raise UsageError(f"input not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class ExperimentController(QObject):
    """Runs the toolkit's subcommands for one RunConfig"""

    # Signals
    log = pyqtSignal(str, str)
    progress = pyqtSignal(str, int)
    failed = pyqtSignal(str, str)

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        self.thread_pool = QThreadPool()
        self.thread_pool.setMaxThreadCount(self.config.workers)

    def path(self, name):
        return os.path.join(self.config.output_dir, name)

    def _ensure_output_dir(self):
        os.makedirs(self.config.output_dir, exist_ok=True)

    def _map(self, stage, jobs):
        """Runs (key, callable) jobs on the pool and returns results ordered by key.

        Scheduling order never shows in the output. When any job fails the
        error of the smallest failing key is raised.
        """
        results, errors, mutex = {}, {}, QMutex()
        jobs = list(jobs)
        for key, work in jobs:
            self.thread_pool.start(TrialTask(key, work, results, errors, mutex))
        self.thread_pool.waitForDone()
        if errors:
            key = min(errors)
            self.failed.emit(stage, f"{key}: {errors[key]}")
            raise errors[key]
        self.progress.emit(stage, len(jobs))
        return [results[key] for key in sorted(results)]

    # synth

    def synthesize(self, n_per_label, seed):
        """Synthetic labelled dataset; identical for identical (config, seed)"""
        cfg = self.config.synth
        plan = dataset_plan(n_per_label, cfg, seed)
        jobs = [(trial_id, lambda label=label, child=child, trial_id=trial_id:
                 synth_trial(label, cfg, child, trial_id=trial_id))
                for label, child, trial_id in plan]
        dataset = self._map("synth", jobs)
        self.log.emit("synth", f"{len(dataset)} trials from seed {seed}")
        return dataset

    def cmd_synth(self, path=None, n_per_label=None, seed=None):
        n_per_label = n_per_label or self.config.n_per_label
        seed = self.config.train_seed if seed is None else seed
        path = path or self.path(TRAIN_FILE)
        self._ensure_output_dir()
        dataset = self.synthesize(n_per_label, seed)
        write_trials(dataset, path)
        self.log.emit("synth", f"wrote {path}")
        return dataset

    # fit

    def load_dataset(self, path):
        trials = load_trials(path)
        for trial_id, reason in trials.rejected:
            self.log.emit("load", f"rejected {trial_id}: {reason}")
        if not trials.trajectories:
            raise UsageError(f"no valid trials in {path}")
        self.log.emit("load", f"{len(trials.trajectories)} trials from {path}, {len(trials.rejected)} rejected")
        return trials.trajectories

    def cmd_fit(self, train_path=None, model_path=None):
        train_path = train_path or self.path(TRAIN_FILE)
        model_path = model_path or self.path(MODEL_FILE)
        dataset = self.load_dataset(train_path)
        try:
            pair = fit_pair(dataset, cutoff_hz=self.config.classifier.filter_cutoff_hz)
        except MissingLabelError as exc:
            self.failed.emit("fit", str(exc))
            raise
        os.makedirs(os.path.dirname(os.path.abspath(model_path)), exist_ok=True)
        save_model(pair, model_path)
        self.log.emit("fit", f"slopes not_careful={pair.not_careful.slope:.6g} "
                             f"careful={pair.careful.slope:.6g}, wrote {model_path}")
        return pair

    # classify

    def classify(self, dataset, models, phase=Phase.CARRY, target=Target.HANDOVER):
        cfg = self.config.classifier
        jobs = [(traj.meta.trial_id, lambda traj=traj: evaluate_trial(traj, models, cfg, phase, target))
                for traj in dataset if traj.has_phase(phase)]
        if not jobs:
            raise UsageError(f"no trial has a '{phase.value}' phase")
        report = summarize(self._map(f"classify-{phase.value}", jobs), phase)
        accuracy = ", ".join(f"{label.value}={value:.3f}" for label, value in report.accuracy.items())
        self.log.emit("classify", f"{phase.value}: {accuracy}")
        return report

    def cmd_classify(self, eval_path=None, model_path=None, output_path=None):
        """Transport and reach evaluation into one JSON document plus belief traces"""
        eval_path = eval_path or self.path(EVAL_FILE)
        model_path = model_path or self.path(MODEL_FILE)
        output_path = output_path or self.path(CLASSIFICATION_FILE)
        if not os.path.exists(model_path):
            raise UsageError(f"model file not found: {model_path}")
        models = load_model(model_path)
        dataset = self.load_dataset(eval_path)
        transport = self.classify(dataset, models, Phase.CARRY, Target.HANDOVER)
        reach = self.classify(dataset, models, Phase.REACH, Target.CUP)

        self._ensure_output_dir()
        if self.config.write_traces:
            trace_dir = self.path(TRACE_DIR)
            os.makedirs(trace_dir, exist_ok=True)
            for outcome in transport.outcomes:
                write_trace_csv(outcome.decision, os.path.join(trace_dir, f"{outcome.trial_id}.csv"))
        write_json({"transport": transport.to_json(), "reach": reach.to_json()}, output_path)
        self.log.emit("classify", f"wrote {output_path}")
        return transport, reach

    # simulate

    def _simulator(self, models):
        cfg = self.config
        return HandoverSimulator(cfg.geometry, cfg.neutral, cfg.expressive, cfg.sim,
                                 models=models, classifier_cfg=cfg.classifier)

    def simulate(self, models=None):
        """Paired NEU and EXP blocks: both conditions see the same cups and humans"""
        cfg = self.config
        jobs = []
        for index in range(cfg.n_blocks):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.sim_seed, index]))
            cups = balanced_sequence(rng)
            source = human_trial_source(cfg.synth, cfg.geometry, seed=cfg.sim_seed * 100003 + index)
            for condition in Condition:
                block_id = f"{condition.value}-{index:03d}"
                jobs.append((block_id, lambda cups=cups, condition=condition, source=source, block_id=block_id:
                             self._simulator(models).run_block(cups, condition, source, cfg.latency, block_id)))
        blocks = self._map("simulate", jobs)
        for block in blocks:
            self.log.emit(block.block_id, f"total {block.total_time:.3f} s, robot {block.robot_time:.3f} s, "
                                          f"net human {block.net_human_time:.3f} s")
        return blocks

    def cmd_simulate(self, model_path=None, output_path=None):
        model_path = model_path or self.path(MODEL_FILE)
        output_path = output_path or self.path(SIMULATION_FILE)
        models = load_model(model_path) if os.path.exists(model_path) else None
        if models is None:
            self.log.emit("simulate", "no model file, running without the online classifier")
        blocks = self.simulate(models)
        self._ensure_output_dir()
        if self.config.write_traces:
            trace_dir = self.path(SIM_TRACE_DIR)
            os.makedirs(trace_dir, exist_ok=True)
            for block in blocks:
                for trial in block.trials:
                    trial.write_trace_csv(os.path.join(trace_dir, f"{trial.trial_id}.csv"))
        write_json({"tick_hz": self.config.sim.tick_hz, "blocks": [b.to_json() for b in blocks]}, output_path)
        self.log.emit("simulate", f"wrote {output_path}")
        return blocks

    # report

    def cmd_report(self):
        classification = read_json(self.path(CLASSIFICATION_FILE))
        simulation = read_json(self.path(SIMULATION_FILE))
        eval_path = self.path(EVAL_FILE)
        dataset = self.load_dataset(eval_path) if os.path.exists(eval_path) else []
        writer = ReportWriter(self.config.output_dir, dt=self.config.classifier.dt)
        writer.log.connect(self.log.emit)
        return writer.write_all(classification, simulation, dataset)

    def cmd_pipeline(self):
        """synth, fit, classify, simulate and report into one output directory"""
        self._ensure_output_dir()
        write_json(self.config.to_dict(), self.path(CONFIG_FILE))
        self.cmd_synth(self.path(TRAIN_FILE), self.config.n_per_label, self.config.train_seed)
        self.cmd_synth(self.path(EVAL_FILE), self.config.n_eval_per_label, self.config.eval_seed)
        self.cmd_fit()
        self.cmd_classify()
        self.cmd_simulate()
        return self.cmd_report()
