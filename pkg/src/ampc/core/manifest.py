import json
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from filelock import FileLock

from ampc.core.status import COMPLETED, FAILED, PENDING, RUNNING, SKIPPED, check_status
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

STAGES = ("validate", "design", "sample", "train", "certify", "bench")
LOCK_TIMEOUT = 30.0


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def lock_for(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock", timeout=LOCK_TIMEOUT)


@dataclass
class StageRecord:
    status: str = PENDING
    timestamp_start: Optional[str] = None
    timestamp_end: Optional[str] = None
    attempts: int = 0
    artifacts: dict[str, str] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class RunManifest:
    run_id: str
    output_dir: str
    config_path: Optional[str] = None
    status: str = PENDING
    timestamp_created: str = field(default_factory=utc_now_iso)
    timestamp_updated: Optional[str] = None
    retrain_rounds: int = 0
    stages: dict[str, dict[str, Any]] = field(
        default_factory=lambda: {name: asdict(StageRecord()) for name in STAGES}
    )

    def save(self, path: Path) -> None:
        """Atomic write (tempfile + replace) under a file lock."""
        self.timestamp_updated = utc_now_iso()
        path.parent.mkdir(parents=True, exist_ok=True)
        with lock_for(path):
            with tempfile.NamedTemporaryFile(
                "w", delete=False, dir=path.parent, suffix=".tmp"
            ) as tmp:
                json.dump(asdict(self), tmp, indent=2)
                tmp_path = Path(tmp.name)
            tmp_path.replace(path)
        logger.debug(f"Saved manifest to {path}")

    def stage(self, name: str) -> StageRecord:
        if name not in self.stages:
            raise KeyError(f"Unknown stage: {name}")
        return StageRecord(**self.stages[name])

    def _put(self, name: str, record: StageRecord) -> None:
        self.stages[name] = asdict(record)

    def start_stage(self, name: str) -> None:
        record = self.stage(name)
        record.status = RUNNING
        record.timestamp_start = utc_now_iso()
        record.timestamp_end = None
        record.attempts += 1
        record.error = None
        self._put(name, record)
        self.status = RUNNING

    def finish_stage(
        self,
        name: str,
        artifacts: Optional[dict[str, str]] = None,
        summary: Optional[dict[str, Any]] = None,
    ) -> None:
        record = self.stage(name)
        record.status = COMPLETED
        record.timestamp_end = utc_now_iso()
        record.artifacts.update(artifacts or {})
        record.summary.update(summary or {})
        self._put(name, record)

    def fail_stage(self, name: str, error: str) -> None:
        record = self.stage(name)
        record.status = FAILED
        record.timestamp_end = utc_now_iso()
        record.error = error
        self._put(name, record)
        self.status = FAILED

    def skip_stage(self, name: str) -> None:
        record = self.stage(name)
        record.status = SKIPPED
        self._put(name, record)

    def set_status(self, status: str) -> None:
        self.status = check_status(status)


def init_run_manifest(
    path: Path, run_id: str, output_dir: Path, config_path: Optional[Path] = None
) -> RunManifest:
    manifest = RunManifest(
        run_id=run_id,
        output_dir=str(output_dir),
        config_path=str(config_path) if config_path is not None else None,
    )
    manifest.save(path)
    logger.info(f"Initialized run manifest at {path}")
    return manifest

