import json
import threading
import time
from pathlib import Path
from typing import Any, Optional

import pytest

from ampc.core.registry import VALID_EVENT_TYPES, RegistryManager
from ampc.core.status import VALID_STATUSES


def make_event(
    run_id: str,
    status: Optional[str] = None,
    event_type: str = "UPDATE_STATUS",
    **fields: Any,
) -> dict[str, Any]:
    event = {
        "type": event_type,
        "run_id": run_id,
        "timestamp": "2026-03-02T12:00:00Z",
        **fields,
    }
    if status is not None:
        event["status"] = status
    return event


def read_events(path: Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in path.read_text().splitlines() if line]


class TestRegistryManager:
    @pytest.fixture  # type: ignore[misc]
    def events_path(self, tmp_path: Path) -> Path:
        return tmp_path / "events.jsonl"

    @pytest.fixture  # type: ignore[misc]
    def registry(self, events_path: Path) -> RegistryManager:
        return RegistryManager(events_path=events_path)

    def test_append_event(self, registry: RegistryManager, events_path: Path) -> None:
        registry.append_event(make_event("run_A", "PENDING"))
        loaded = read_events(events_path)
        assert len(loaded) == 1
        assert loaded[0]["run_id"] == "run_A"
        assert loaded[0]["status"] == "PENDING"

    def test_pipeline_events_in_order(
        self, registry: RegistryManager, events_path: Path
    ) -> None:
        created = registry.run_created("run_A", Path("/tmp/out"))
        registry.stage_status("run_A", "train", "RUNNING")
        registry.retrain("run_A", 1)
        registry.run_status("run_A", "FAILED")
        assert "timestamp" in created
        events = read_events(events_path)
        assert [e["type"] for e in events] == [
            "CREATE_RUN",
            "UPDATE_STATUS",
            "RETRY",
            "UPDATE_STATUS",
        ]
        assert events[0]["output_dir"] == "/tmp/out"
        assert events[1]["stage"] == "train"
        assert (events[2]["stage"], events[2]["round"]) == ("train", 1)
        assert "stage" not in events[3]
        assert events[3]["status"] == "FAILED"

    def test_default_location(self, tmp_path: Path) -> None:
        # the test session points AMPC_ROOT at tmp_path
        registry = RegistryManager()
        assert registry.events_path == tmp_path / "results" / "events.jsonl"

    def test_invalid_event_type(self, registry: RegistryManager) -> None:
        with pytest.raises(ValueError, match="Invalid event type"):
            registry.append_event(make_event("run_A", "PENDING", event_type="BAD_TYPE"))

    def test_missing_status_on_update(self, registry: RegistryManager) -> None:
        with pytest.raises(ValueError, match="'status'"):
            registry.append_event(make_event("run_A"))

    def test_retry_needs_round(self, registry: RegistryManager) -> None:
        with pytest.raises(ValueError, match="'round'"):
            registry.append_event(
                make_event("run_A", event_type="RETRY", stage="train")
            )

    def test_unknown_stage(self, registry: RegistryManager) -> None:
        with pytest.raises(ValueError, match="Unknown stage"):
            registry.stage_status("run_A", "deploy", "RUNNING")

    @pytest.mark.parametrize(  # type: ignore[misc]
        "bad_status", ["BAD", "", "pending", "TIME OUT"]
    )
    def test_invalid_status(self, registry: RegistryManager, bad_status: str) -> None:
        with pytest.raises(ValueError, match="Invalid status"):
            registry.append_event(make_event("A", status=bad_status))

    @pytest.mark.parametrize("status", sorted(VALID_STATUSES))  # type: ignore[misc]
    def test_all_valid_statuses_accepted(
        self, registry: RegistryManager, events_path: Path, status: str
    ) -> None:
        registry.stage_status(f"run_{status}", "design", status)
        assert read_events(events_path)[-1]["status"] == status

    @pytest.mark.parametrize(  # type: ignore[misc]
        "event_type", sorted(VALID_EVENT_TYPES)
    )
    def test_missing_run_id_raises(
        self, registry: RegistryManager, event_type: str
    ) -> None:
        event = {"type": event_type, "timestamp": "2026-03-02T12:00:00Z"}
        with pytest.raises(ValueError, match="must include 'run_id'"):
            registry.append_event(event)

    def test_concurrent_appends_are_serialized(self, tmp_path: Path) -> None:
        events_path = tmp_path.joinpath("events.jsonl")
        rm = RegistryManager(events_path=events_path)

        num_threads = 3

        def writer(i: int) -> None:
            rm.append_event(
                {
                    "type": "CREATE_RUN",
                    "run_id": f"run_{i:04d}",
                    "timestamp": time.time(),
                    "output_dir": str(tmp_path),
                }
            )

        threads = [
            threading.Thread(target=writer, args=(i,)) for i in range(num_threads)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        parsed = read_events(events_path)
        assert len(parsed) == num_threads
        assert all("type" in e and "run_id" in e and "timestamp" in e for e in parsed)
