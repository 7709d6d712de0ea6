"""Error type shared by every subsystem.

Each failure carries a short machine-readable ``code`` (``DUPLICATE_DATASET``,
``PURGE_REFUSED``, ...) so callers and tests can branch on it without parsing
messages.
"""

from __future__ import annotations

from typing import Any


class FlowError(Exception):
    def __init__(self, code: str, message: str = "", **detail: Any):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {message}" if message else code)
