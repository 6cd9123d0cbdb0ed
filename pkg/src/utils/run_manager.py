import asyncio
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import aiosqlite

from config import settings
from src.utils.file_manager import file_manager

logger = logging.getLogger(__name__)


@dataclass
class RunStatus:
    """Run status information"""
    run_id: str
    status: str  # queued, processing, completed, failed
    output_dir: Optional[str] = None
    summary: Optional[dict] = None
    error: Optional[str] = None
    created_at: datetime = field(default_factory=datetime.utcnow)
    updated_at: datetime = field(default_factory=datetime.utcnow)


@dataclass
class RunJob:
    """One simulation run of a sweep"""
    run_id: str
    config: dict  # SimConfig dump (by alias)
    output_dir: str
    axis: Optional[str] = None
    value: Optional[object] = None
    seed: int = 0


class RunManager:
    """
    Run queue and status store for sweeps.

    Statuses persist in sqlite so a re-invoked sweep skips runs already
    completed whose output files still exist. Concurrency is limited with
    asyncio.Semaphore.
    """

    def __init__(self, max_concurrent_runs: int = 2, db_path: Optional[str] = None):
        self.max_concurrent_runs = max_concurrent_runs
        self.semaphore = asyncio.Semaphore(max_concurrent_runs)
        self.run_queue: asyncio.Queue[RunJob] = asyncio.Queue()
        self.run_statuses: Dict[str, RunStatus] = {}
        self.db_path = Path(db_path or settings.run_db_path)
        self._db: Optional[aiosqlite.Connection] = None

    async def initialize(self):
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._db = await aiosqlite.connect(self.db_path.as_posix())
        db = self._db
        if db is None:
            raise RuntimeError("Failed to initialize run database")

        await db.execute("PRAGMA journal_mode=WAL")
        await db.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,
                status TEXT NOT NULL,
                payload TEXT NOT NULL,
                output_dir TEXT,
                summary TEXT,
                error TEXT,
                created_at TEXT NOT NULL,
                updated_at TEXT NOT NULL
            )
            """
        )
        await db.commit()
        await self._load_existing_runs()

    async def close(self):
        if self._db:
            await self._db.close()
            self._db = None

    async def _load_existing_runs(self):
        db = self._db
        if db is None:
            return

        async with db.execute(
            "SELECT run_id, status, output_dir, summary, error, created_at, updated_at FROM runs"
        ) as cursor:
            async for row in cursor:
                run_id, status, output_dir, summary, error, created_at, updated_at = row
                self.run_statuses[run_id] = RunStatus(
                    run_id=run_id,
                    status=status,
                    output_dir=output_dir,
                    summary=json.loads(summary) if summary else None,
                    error=error,
                    created_at=datetime.fromisoformat(created_at),
                    updated_at=datetime.fromisoformat(updated_at),
                )
        if self.run_statuses:
            logger.info(f"Loaded {len(self.run_statuses)} stored run statuses from {self.db_path}")

    def is_done(self, run_id: str, output_dir: str) -> bool:
        """Completed in the store and its files are present in output_dir."""
        status = self.run_statuses.get(run_id)
        if not status or status.status != "completed":
            return False
        return file_manager.outputs_exist(Path(output_dir), run_id)

    async def add_run(self, job: RunJob) -> bool:
        """
        Queue a run unless it is already done.

        Args:
            job: RunJob to process

        Returns:
            True if the run was queued
        """
        if self.is_done(job.run_id, job.output_dir):
            logger.info(f"Run {job.run_id} already completed, skipping")
            return False

        now = datetime.utcnow()
        self.run_statuses[job.run_id] = RunStatus(
            run_id=job.run_id,
            status="queued",
            output_dir=job.output_dir,
            created_at=now,
            updated_at=now,
        )
        await self._insert_run_row(job)

        self.run_queue.put_nowait(job)
        logger.info(f"Run {job.run_id} added to queue (queue size: {self.run_queue.qsize()})")
        return True

    async def get_run_status(self, run_id: str) -> Optional[RunStatus]:
        return self.run_statuses.get(run_id)

    async def update_run_status(
        self,
        run_id: str,
        status: str,
        summary: Optional[dict] = None,
        error: Optional[str] = None,
    ):
        """
        Update run status.

        Args:
            run_id: Run ID
            status: New status
            summary: Optional run summary (stored as JSON)
            error: Optional error message; cleared on non-failed statuses
        """
        if run_id not in self.run_statuses:
            logger.warning(f"Attempted to update non-existent run: {run_id}")
            return

        run_status = self.run_statuses[run_id]
        if error is not None and not isinstance(error, str):
            error = str(error)
        run_status.status = status
        run_status.updated_at = datetime.utcnow()
        if summary is not None:
            run_status.summary = summary
        run_status.error = error if status == "failed" else None

        await self._update_status_row(run_id, status, summary=summary, error=run_status.error)
        logger.info(f"Run {run_id} status updated to: {status}")

    async def get_next_run(self) -> RunJob:
        """Next RunJob from the queue (blocks if empty)."""
        return await self.run_queue.get()

    def get_queue_size(self) -> int:
        return self.run_queue.qsize()

    def get_active_runs_count(self) -> int:
        return sum(1 for run in self.run_statuses.values() if run.status == "processing")

    async def _insert_run_row(self, job: RunJob):
        if not self._db:
            return

        now = datetime.utcnow().isoformat()
        payload = json.dumps(job.__dict__, sort_keys=True)
        await self._db.execute(
            """
            INSERT OR REPLACE INTO runs (
                run_id, status, payload, output_dir, summary, error, created_at, updated_at
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            """,
            (job.run_id, "queued", payload, job.output_dir, None, None, now, now),
        )
        await self._db.commit()

    async def _update_status_row(
        self,
        run_id: str,
        status: str,
        summary: Optional[dict] = None,
        error: Optional[str] = None,
    ):
        if not self._db:
            return

        fields = ["status = ?", "updated_at = ?", "error = ?"]
        values = [status, datetime.utcnow().isoformat(), error]
        if summary is not None:
            fields.append("summary = ?")
            values.append(file_manager.dumps(summary, indent=None))
        values.append(run_id)

        await self._db.execute(f"UPDATE runs SET {', '.join(fields)} WHERE run_id = ?", values)
        await self._db.commit()


# Global singleton instance
run_manager: Optional[RunManager] = None


def get_run_manager() -> RunManager:
    """Get the global run manager instance"""
    global run_manager
    if run_manager is None:
        run_manager = RunManager(
            max_concurrent_runs=settings.max_concurrent_runs,
            db_path=settings.run_db_path,
        )
    return run_manager
