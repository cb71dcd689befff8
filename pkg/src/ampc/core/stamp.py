from datetime import datetime, timezone
from typing import cast

import ulid

from ampc.constants import RUN_PREFIX, SHARD_PAD, SHARD_PREFIX, SHARD_SUFFIX


def create_run_id() -> str:
    """
    Generate a new run ID (`run_<ULID>`); sortable by creation time.
    """
    return f"{RUN_PREFIX}{ulid.new()}"


def parse_run_id(run_id: str) -> str:
    if not run_id.startswith(RUN_PREFIX):
        raise ValueError(f"Invalid run ID: {run_id}")
    raw = run_id[len(RUN_PREFIX) :]
    if len(raw) != 26:
        raise ValueError(f"Malformed run ID: {run_id}")
    return raw


def run_timestamp(run_id: str) -> datetime:
    """Creation time encoded in the run ID (UTC)."""
    raw = parse_run_id(run_id)
    return cast(
        datetime,
        ulid.api.parse(raw).timestamp().datetime.replace(tzinfo=timezone.utc),
    )


def is_valid_run_id(run_id: str) -> bool:
    try:
        raw = parse_run_id(run_id)
        ulid.api.parse(raw)
        return True
    except Exception:
        return False


def format_shard_name(index: int) -> str:
    return f"{SHARD_PREFIX}{index:0{SHARD_PAD}d}{SHARD_SUFFIX}"


def parse_shard_name(name: str) -> int:
    if not (name.startswith(SHARD_PREFIX) and name.endswith(SHARD_SUFFIX)):
        raise ValueError(f"Invalid shard name: {name}")
    digits = name[len(SHARD_PREFIX) : -len(SHARD_SUFFIX)]
    if not digits.isdigit():
        raise ValueError(f"Invalid shard name: {name}")
    return int(digits)


def is_valid_shard_name(name: str) -> bool:
    try:
        parse_shard_name(name)
        return True
    except ValueError:
        return False
