"""Thread-backed run registry for the experiment service.

Training runs are minutes long, so submissions return immediately with a
run id and execute on a worker thread; clients poll for status and fetch
artifacts when done. Each run writes into its own directory under the
registry root.
"""

from __future__ import annotations

import tempfile
import threading
import traceback
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..harness import ExperimentConfig, run_experiment


@dataclass
class RunRecord:
    run_id: str
    config: ExperimentConfig
    workdir: Path
    label: str | None = None
    status: str = "pending"
    replications_done: int = 0
    replications_total: int = 0
    error: str | None = None
    error_traceback: str | None = None
    manifest: dict | None = None
    thread: threading.Thread | None = field(default=None, repr=False)


class RunRegistry:
    def __init__(self, root: str | Path | None = None):
        self._root = Path(root) if root is not None else Path(tempfile.mkdtemp(prefix="cbfrl-runs-"))
        self._root.mkdir(parents=True, exist_ok=True)
        self._runs: dict[str, RunRecord] = {}
        self._lock = threading.Lock()

    def submit(self, config: ExperimentConfig, label: str | None = None) -> RunRecord:
        run_id = uuid.uuid4().hex[:12]
        record = RunRecord(
            run_id=run_id,
            config=config,
            workdir=self._root / run_id,
            label=label,
            replications_total=config.experiment.replications,
        )
        with self._lock:
            self._runs[run_id] = record

        def progress(done, total):
            record.replications_done = done
            record.replications_total = total

        def worker():
            record.status = "running"
            try:
                record.manifest = run_experiment(config, output_dir=record.workdir, progress=progress)
                record.replications_done = record.replications_total
                record.status = "done"
            except Exception as exc:  # surfaced to the client via status
                record.error = f"{type(exc).__name__}: {exc}"
                record.error_traceback = traceback.format_exc()
                record.status = "failed"

        record.thread = threading.Thread(target=worker, daemon=True)
        record.thread.start()
        return record

    def get(self, run_id: str) -> RunRecord | None:
        with self._lock:
            return self._runs.get(run_id)

    def all(self) -> list[RunRecord]:
        with self._lock:
            return list(self._runs.values())

    def wait(self, run_id: str, timeout: float | None = None) -> None:
        record = self.get(run_id)
        if record is not None and record.thread is not None:
            record.thread.join(timeout)
