import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# "


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return value.as_posix()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class FileManager:
    """
    Writes result artifacts.

    Every CSV starts with a comment line carrying its parameter set as
    compact sorted JSON, so files are self-describing and byte-stable.
    """

    @staticmethod
    def dumps(data: dict, indent: Optional[int] = 2) -> str:
        separators = (",", ": ") if indent else (",", ":")
        return json.dumps(data, sort_keys=True, indent=indent, separators=separators, default=_to_builtin)

    @staticmethod
    def write_csv(frame: pd.DataFrame, path: Path, params: dict) -> Path:
        """
        Write a frame as CSV behind a parameter header line.

        Args:
            frame: Table to write (index is dropped)
            path: Destination file
            params: Parameter set recorded in the header

        Returns:
            The written path
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(HEADER_PREFIX + FileManager.dumps(params, indent=None) + "\n")
            frame.to_csv(f, index=False, lineterminator="\n")
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    @staticmethod
    def read_csv(path: Path) -> pd.DataFrame:
        return pd.read_csv(path, skiprows=1)

    @staticmethod
    def read_header(path: Path) -> dict:
        with open(path, encoding="utf-8") as f:
            line = f.readline()
        if not line.startswith(HEADER_PREFIX):
            raise ValueError(f"{path} has no parameter header")
        return json.loads(line[len(HEADER_PREFIX):])

    @staticmethod
    def write_json(data: dict, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(FileManager.dumps(data) + "\n", encoding="utf-8")
        return path

    @staticmethod
    def read_json(path: Path) -> dict:
        return json.loads(path.read_text(encoding="utf-8"))

    @staticmethod
    def run_paths(output_dir: Path, run_id: str) -> dict[str, Path]:
        runs = Path(output_dir) / "runs"
        return {
            "csv": runs / f"{run_id}.csv",
            "json": runs / f"{run_id}.json",
            "events": runs / f"{run_id}_events.csv",
        }

    @staticmethod
    def outputs_exist(output_dir: Path, run_id: str) -> bool:
        paths = FileManager.run_paths(output_dir, run_id)
        return paths["csv"].exists() and paths["json"].exists()

    @staticmethod
    def cleanup_run_files(output_dir: Path, run_id: str):
        """Remove partial per-run outputs after a failed run."""
        for path in FileManager.run_paths(output_dir, run_id).values():
            if not path.exists():
                continue
            try:
                path.unlink()
                logger.info(f"Removed partial output {path}")
            except OSError as e:
                logger.warning(f"Failed to remove {path}: {str(e)}")


# Singleton instance
file_manager = FileManager()
