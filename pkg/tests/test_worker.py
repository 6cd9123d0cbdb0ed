import asyncio
import logging

from src.utils.file_manager import file_manager
from src.utils.run_manager import RunJob, RunManager
from src.utils.worker import execute_run, run_jobs


def make_job(out, run_id: str, **overrides) -> RunJob:
    config = {"n": 64, "delta": 0.0, "lambda": 0.01, "slots": 100, "seed": 0, **overrides}
    return RunJob(run_id=run_id, config=config, output_dir=out.as_posix(), seed=config["seed"])


def test_execute_run_writes_outputs(tmp_path) -> None:
    job = make_job(tmp_path, "single", trace_events=True)
    summary = execute_run(job)
    paths = file_manager.run_paths(tmp_path, "single")
    assert paths["csv"].exists() and paths["json"].exists() and paths["events"].exists()
    header = file_manager.read_header(paths["csv"])
    assert header["run_id"] == "single"
    assert header["Z0"] > 0
    data = file_manager.read_json(paths["json"])
    assert data["summary"] == summary
    assert len(file_manager.read_csv(paths["csv"])) == 64


def test_failed_run_is_recorded_and_cleaned(inline_runs) -> None:
    out = inline_runs / "out"
    jobs = [make_job(out, "good"), make_job(out, "bad", n=2)]
    manager = RunManager(db_path=(inline_runs / "runs.sqlite").as_posix())
    statuses = asyncio.run(run_jobs(jobs, num_workers=2, run_manager=manager))
    assert statuses == {"good": "completed", "bad": "failed"}
    assert file_manager.outputs_exist(out, "good")
    assert not file_manager.outputs_exist(out, "bad")
    assert "n" in manager.run_statuses["bad"].error


def test_rerun_skips_completed_runs(inline_runs) -> None:
    out = inline_runs / "out"
    db = (inline_runs / "runs.sqlite").as_posix()
    jobs = [make_job(out, "a"), make_job(out, "b", seed=1)]
    asyncio.run(run_jobs(jobs, num_workers=1, run_manager=RunManager(db_path=db)))
    before = file_manager.run_paths(out, "a")["json"].stat().st_mtime_ns

    manager = RunManager(db_path=db)
    statuses = asyncio.run(run_jobs(jobs, num_workers=1, run_manager=manager))
    assert statuses == {"a": "completed", "b": "completed"}
    assert manager.get_queue_size() == 0
    assert file_manager.run_paths(out, "a")["json"].stat().st_mtime_ns == before


def test_worker_logs_queue_progress(inline_runs, caplog) -> None:
    caplog.set_level(logging.INFO, logger="src.utils.worker")
    out = inline_runs / "out"
    jobs = [make_job(out, name, seed=seed) for seed, name in enumerate("abc")]
    manager = RunManager(db_path=(inline_runs / "runs.sqlite").as_posix())
    statuses = asyncio.run(run_jobs(jobs, num_workers=1, run_manager=manager))
    assert set(statuses.values()) == {"completed"}
    assert "picked up run a (queued: 2, active: 0)" in caplog.text
    assert "picked up run c (queued: 0, active: 0)" in caplog.text
    assert manager.get_active_runs_count() == 0
