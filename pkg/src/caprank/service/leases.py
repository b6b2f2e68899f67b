"""Time-limited exclusive claims on annotation tasks.

A lease keeps two labelers off the same task without requiring the holder
to ever release it: expiry returns the task to the pool on its own, so an
abandoned browser session cannot strand work. The clock is injected so
tests can move time instead of sleeping.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional


@dataclass(frozen=True)
class Lease:
    task_id: str
    labeler_id: str
    expires_at: float


class LeaseTable:
    def __init__(self, ttl_seconds: float = 1800.0, clock: Callable[[], float] = time.time):
        if ttl_seconds <= 0:
            raise ValueError("lease ttl must be positive")
        self.ttl = ttl_seconds
        self.clock = clock
        self._lock = threading.Lock()
        self._leases: dict[str, Lease] = {}

    def _prune(self, now: float):
        expired = [tid for tid, lease in self._leases.items() if lease.expires_at <= now]
        for tid in expired:
            del self._leases[tid]

    def acquire(self, task_id: str, labeler_id: str) -> Optional[Lease]:
        """Claim a task; returns None when an unexpired lease blocks it.

        Re-acquiring a task one already holds refreshes the expiry.
        """
        with self._lock:
            now = self.clock()
            self._prune(now)
            current = self._leases.get(task_id)
            if current is not None and current.labeler_id != labeler_id:
                return None
            lease = Lease(task_id, labeler_id, now + self.ttl)
            self._leases[task_id] = lease
            return lease

    def holder(self, task_id: str) -> Optional[Lease]:
        with self._lock:
            now = self.clock()
            self._prune(now)
            return self._leases.get(task_id)

    def release(self, task_id: str, labeler_id: str) -> bool:
        with self._lock:
            lease = self._leases.get(task_id)
            if lease is not None and lease.labeler_id == labeler_id:
                del self._leases[task_id]
                return True
            return False

    def active_count(self) -> int:
        with self._lock:
            self._prune(self.clock())
            return len(self._leases)

    def is_held_by(self, task_id: str, labeler_id: str) -> bool:
        lease = self.holder(task_id)
        return lease is not None and lease.labeler_id == labeler_id
