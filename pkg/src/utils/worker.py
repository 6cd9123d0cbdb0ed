import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import pandas as pd

from config import settings
from src.services.simulator import SimConfig, Simulator
from src.utils.file_manager import file_manager
from src.utils.run_manager import RunJob, RunManager, get_run_manager

logger = logging.getLogger(__name__)


def execute_run(job: RunJob) -> dict:
    """
    Run one simulation and write its per-run files.

    Runs inside a pool process; returns the run summary.
    """
    config = SimConfig.model_validate(job.config)
    simulator = Simulator(config)
    report = simulator.run()

    params = dict(config.describe(), run_id=job.run_id)
    paths = file_manager.run_paths(Path(job.output_dir), job.run_id)
    file_manager.write_csv(report.to_frame(), paths["csv"], params)
    data = report.to_dict()
    data["run_id"] = job.run_id
    file_manager.write_json(data, paths["json"])
    if config.trace_events:
        events = pd.DataFrame(
            [e.__dict__ for e in simulator.events],
            columns=["slot", "step", "phase", "tx", "rx", "msg", "delivered"],
        )
        file_manager.write_csv(events, paths["events"], params)
    return report.summary()


def make_executor(num_workers: int) -> Executor:
    if settings.use_process_pool:
        return ProcessPoolExecutor(max_workers=num_workers)
    return ThreadPoolExecutor(max_workers=num_workers)


async def process_run(job: RunJob, run_manager: RunManager, executor: Executor):
    """
    Process a single run job.

    Args:
        job: RunJob to process
        run_manager: Status store
        executor: Pool running the CPU-bound simulation
    """
    run_id = job.run_id
    try:
        if run_manager.is_done(run_id, job.output_dir):
            logger.info(f"[{run_id}] Run already completed, skipping")
            return

        await run_manager.update_run_status(run_id, "processing")
        logger.info(f"[{run_id}] Starting run ({job.axis}={job.value}, seed={job.seed})")

        loop = asyncio.get_running_loop()
        summary = await loop.run_in_executor(executor, execute_run, job)

        await run_manager.update_run_status(run_id, "completed", summary=summary)
        logger.info(
            f"[{run_id}] Completed: throughput={summary['throughput']:.6g} "
            f"mean_delay={summary['mean_delay']}"
        )

    except Exception as e:
        error_msg = str(e)
        logger.exception(f"[{run_id}] Run failed: {error_msg}")
        await run_manager.update_run_status(run_id, "failed", error=error_msg)
        file_manager.cleanup_run_files(Path(job.output_dir), run_id)


async def worker(worker_id: int, run_manager: RunManager, executor: Executor):
    """
    Background worker that processes runs from the queue.

    Args:
        worker_id: Worker identifier for logging
        run_manager: Queue and status store
        executor: Pool for the simulations
    """
    logger.info(f"Worker {worker_id} started")

    while True:
        try:
            async with run_manager.semaphore:
                job = await run_manager.get_next_run()
                logger.info(
                    f"Worker {worker_id} picked up run {job.run_id} "
                    f"(queued: {run_manager.get_queue_size()}, active: {run_manager.get_active_runs_count()})"
                )
                try:
                    await process_run(job, run_manager, executor)
                finally:
                    run_manager.run_queue.task_done()

        except asyncio.CancelledError:
            logger.info(f"Worker {worker_id} cancelled")
            break
        except Exception as e:
            logger.exception(f"Worker {worker_id} unexpected error: {str(e)}")
            await asyncio.sleep(1)


async def start_workers(num_workers: int, run_manager: RunManager, executor: Executor) -> list[asyncio.Task]:
    """
    Start background workers.

    Args:
        num_workers: Number of worker tasks to create
        run_manager: Queue shared by the workers
        executor: Pool shared by the workers
    """
    logger.info(f"Starting {num_workers} background workers")
    return [asyncio.create_task(worker(i + 1, run_manager, executor)) for i in range(num_workers)]


async def run_jobs(
    jobs: list[RunJob],
    num_workers: Optional[int] = None,
    run_manager: Optional[RunManager] = None,
) -> dict[str, str]:
    """
    Queue jobs, process them with a worker pool and wait for the queue to drain.

    Returns:
        Final status per run id
    """
    num_workers = max(1, num_workers or settings.max_concurrent_runs)
    manager = run_manager or get_run_manager()
    manager.semaphore = asyncio.Semaphore(num_workers)
    await manager.initialize()
    try:
        queued = [job for job in jobs if await manager.add_run(job)]
        logger.info(f"{len(queued)} of {len(jobs)} runs queued, {num_workers} workers")

        with make_executor(num_workers) as executor:
            tasks = await start_workers(num_workers, manager, executor)
            await manager.run_queue.join()
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)

        statuses = {}
        for job in jobs:
            status = await manager.get_run_status(job.run_id)
            statuses[job.run_id] = status.status
        return statuses
    finally:
        await manager.close()
