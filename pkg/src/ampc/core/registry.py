"""
Append-only event log (`events.jsonl`) of a pipeline run: run creation, stage
and run status changes, and retraining rounds. The manifest holds the current
state; the log keeps the order in which it was reached.
"""

import json
from pathlib import Path
from typing import Any, Literal, Optional

from filelock import FileLock

from ampc.core.manifest import STAGES, utc_now_iso
from ampc.core.status import VALID_STATUSES
from ampc.utils.logger import get_logger
from ampc.utils.paths import get_events_path, resolve_output_dir

logger = get_logger(__name__)

EventType = Literal["CREATE_RUN", "UPDATE_STATUS", "RETRY"]

VALID_EVENT_TYPES: frozenset[str] = frozenset({"CREATE_RUN", "UPDATE_STATUS", "RETRY"})

# Fields each event type must carry besides type, run_id and timestamp.
REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "CREATE_RUN": ("output_dir",),
    "UPDATE_STATUS": ("status",),
    "RETRY": ("stage", "round"),
}


class RegistryManager:
    def __init__(self, events_path: Optional[Path] = None) -> None:
        if events_path is None:
            events_path = get_events_path(resolve_output_dir())
        self.events_path = events_path
        self.events_path.parent.mkdir(parents=True, exist_ok=True)

    def append_event(self, event: dict[str, Any]) -> None:
        """
        Append a validated event as one JSON line, under a file lock.

        Raises:
            ValueError for a malformed event.
        """
        self._validate_event(event)
        with FileLock(str(self.events_path) + ".lock"):
            with self.events_path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(event) + "\n")
        logger.debug(f"Event {event['type']} for run {event['run_id']}")

    def _record(self, type_: EventType, run_id: str, **fields: Any) -> dict[str, Any]:
        event = {"type": type_, "run_id": run_id, "timestamp": utc_now_iso(), **fields}
        self.append_event(event)
        return event

    def run_created(self, run_id: str, output_dir: Path) -> dict[str, Any]:
        return self._record("CREATE_RUN", run_id, output_dir=str(output_dir))

    def stage_status(self, run_id: str, stage: str, status: str) -> dict[str, Any]:
        return self._record("UPDATE_STATUS", run_id, stage=stage, status=status)

    def run_status(self, run_id: str, status: str) -> dict[str, Any]:
        return self._record("UPDATE_STATUS", run_id, status=status)

    def retrain(self, run_id: str, round_: int) -> dict[str, Any]:
        return self._record("RETRY", run_id, stage="train", round=round_)

    def _validate_event(self, event: dict[str, Any]) -> None:
        if not isinstance(event, dict):
            raise ValueError("Event must be a dictionary.")
        for key in ("type", "run_id", "timestamp"):
            if key not in event:
                raise ValueError(f"Event must include '{key}'.")
        type_ = event["type"]
        if type_ not in VALID_EVENT_TYPES:
            raise ValueError(f"Invalid event type: {type_}")
        missing = [k for k in REQUIRED_FIELDS[type_] if k not in event]
        if missing:
            raise ValueError(f"{type_} events must include {missing}.")
        if "status" in event and event["status"] not in VALID_STATUSES:
            raise ValueError(f"Invalid status: {event['status']}")
        if "stage" in event and event["stage"] not in STAGES:
            raise ValueError(f"Unknown stage: {event['stage']}")
