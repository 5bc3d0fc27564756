import sys

from PyQt6.QtCore import QObject, Qt


class ConsoleLogView(QObject):
    """Writes controller and simulator signals to standard error as [source] message lines"""

    def __init__(self, stream=None, verbose=False, parent=None):
        super().__init__(parent)
        self.stream = stream if stream is not None else sys.stderr
        self.verbose = verbose

    def attach(self, source):
        """Connects every known signal of source; returns source for chaining"""
        direct = Qt.ConnectionType.DirectConnection
        source.log.connect(self.on_log, direct)
        if hasattr(source, "progress"):
            source.progress.connect(self.on_progress, direct)
        if hasattr(source, "failed"):
            source.failed.connect(self.on_failed, direct)
        if self.verbose and hasattr(source, "state_changed"):
            source.state_changed.connect(self.on_state_changed, direct)
        return source

    def write(self, source, message):
        self.stream.write(f"[{source}] {message}\n")
        self.stream.flush()

    def on_log(self, source, message):
        """Handles log event"""
        self.write(source, message)

    def on_progress(self, stage, count):
        """Handles progress event"""
        if self.verbose:
            self.write(stage, f"{count} done")

    def on_failed(self, stage, error):
        """Handles failure event"""
        self.write(stage, f"failed: {error}")

    def on_state_changed(self, trial_id, state):
        """Handles state machine transitions"""
        self.write(trial_id, f"-> {state}")
