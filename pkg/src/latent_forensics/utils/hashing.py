import hashlib
import json
from typing import Any


def stable_hash(payload: Any, length: int = 12) -> str:
    """
    SHA-256 of the canonical JSON form of `payload`, truncated to `length` hex digits
    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:length]
