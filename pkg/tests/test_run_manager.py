import asyncio

import pandas as pd

from src.utils.file_manager import file_manager
from src.utils.run_manager import RunJob, RunManager


def make_job(tmp_path, run_id: str = "grid-1") -> RunJob:
    return RunJob(run_id=run_id, config={"n": 64}, output_dir=tmp_path.as_posix(), axis="n", value=64, seed=0)


def test_statuses_persist_across_managers(tmp_path) -> None:
    db = (tmp_path / "runs.sqlite").as_posix()

    async def scenario():
        manager = RunManager(db_path=db)
        await manager.initialize()
        assert await manager.add_run(make_job(tmp_path))
        assert manager.get_queue_size() == 1
        await manager.update_run_status("grid-1", "processing")
        assert manager.get_active_runs_count() == 1
        await manager.update_run_status("grid-1", "completed", summary={"throughput": 0.5})
        await manager.close()

        reopened = RunManager(db_path=db)
        await reopened.initialize()
        status = await reopened.get_run_status("grid-1")
        await reopened.close()
        return status

    status = asyncio.run(scenario())
    assert status.status == "completed"
    assert status.summary == {"throughput": 0.5}
    assert status.output_dir == tmp_path.as_posix()


def test_completed_run_with_outputs_is_not_requeued(tmp_path) -> None:
    db = (tmp_path / "runs.sqlite").as_posix()
    job = make_job(tmp_path)

    async def scenario():
        manager = RunManager(db_path=db)
        await manager.initialize()
        await manager.add_run(job)
        await manager.update_run_status(job.run_id, "completed", summary={})
        # store says completed but the files are gone
        requeued_without_files = await manager.add_run(job)
        await manager.update_run_status(job.run_id, "completed", summary={})

        paths = file_manager.run_paths(tmp_path, job.run_id)
        file_manager.write_json({}, paths["json"])
        file_manager.write_csv(pd.DataFrame({"x": [1]}), paths["csv"], {})
        requeued_with_files = await manager.add_run(job)
        await manager.close()
        return requeued_without_files, requeued_with_files

    assert asyncio.run(scenario()) == (True, False)


def test_error_kept_only_on_failure(tmp_path) -> None:
    async def scenario():
        manager = RunManager(db_path=(tmp_path / "runs.sqlite").as_posix())
        await manager.initialize()
        await manager.add_run(make_job(tmp_path))
        await manager.update_run_status("grid-1", "failed", error="boom")
        failed = (await manager.get_run_status("grid-1")).error
        await manager.update_run_status("grid-1", "queued", error="stale")
        cleared = (await manager.get_run_status("grid-1")).error
        await manager.update_run_status("missing", "completed")
        await manager.close()
        return failed, cleared

    assert asyncio.run(scenario()) == ("boom", None)
