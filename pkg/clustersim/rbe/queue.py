from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Any

from ..errors import QueueFullError, SimRuntimeError

logger = logging.getLogger(__name__)

CONTEXTS = 2


@dataclass(slots=True)
class DoneEvent:
    job_id: int
    cycle: int

    def to_dict(self) -> dict[str, Any]:
        return {"event": "rbe_done", "job_id": self.job_id, "cycle": self.cycle}


class JobQueue:
    """Two register-file contexts: the running job plus at most one waiting job."""

    def __init__(self, contexts: int = CONTEXTS) -> None:
        self.contexts = contexts
        self.pending: deque[tuple[int, Any]] = deque()
        self.running: tuple[int, Any] | None = None
        self.done_events: list[DoneEvent] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.pending) + (1 if self.running else 0)

    @property
    def full(self) -> bool:
        return len(self) >= self.contexts

    def enqueue(self, job: Any) -> int:
        if self.full:
            raise QueueFullError(f"RBE job queue holds {self.contexts} jobs; wait for a completion")
        job_id = self._next_id
        self._next_id += 1
        self.pending.append((job_id, job))
        logger.debug("enqueued RBE job %d", job_id)
        return job_id

    def start_next(self) -> tuple[int, Any] | None:
        if self.running is None and self.pending:
            self.running = self.pending.popleft()
        return self.running

    def on_job_done(self, cycle: int = 0) -> DoneEvent:
        if self.running is None:
            raise SimRuntimeError("no running RBE job to complete")
        event = DoneEvent(self.running[0], cycle)
        self.running = None
        self.done_events.append(event)
        return event
