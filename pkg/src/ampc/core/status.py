"""Statuses shared by the run manifest and the event log."""

PENDING = "PENDING"
RUNNING = "RUNNING"
COMPLETED = "COMPLETED"
FAILED = "FAILED"
SKIPPED = "SKIPPED"

# A stage moves PENDING -> RUNNING -> COMPLETED | FAILED, or straight to SKIPPED.
VALID_STATUSES: frozenset[str] = frozenset(
    {PENDING, RUNNING, COMPLETED, FAILED, SKIPPED}
)


def check_status(status: str) -> str:
    """
    Raises:
        ValueError for an unknown status.
    """
    if status not in VALID_STATUSES:
        raise ValueError(f"Invalid status: {status}")
    return status


def run_status(ok: bool) -> str:
    """Final status of a pipeline run."""
    return COMPLETED if ok else FAILED
