"""
Data-file writers (CSV, JSONL, JSON) and the output session that owns them.

Data files contain no timestamps and format floats with repr(), the shortest
decimal that round-trips, so identical runs give identical bytes.
"""
import csv
import io
import json
import logging
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from app import __version__
from app.cli.models import RunManifest, SeedPlanEntry
from app.core.errors import MissingPrerequisiteError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def format_cell(value: Any) -> str:
    """One CSV cell. Nested structures become compact JSON."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    if isinstance(value, (dict, list, tuple)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


def render_csv(rows: Sequence[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
    """Header plus one line per row, '\\n' line endings regardless of platform."""
    if columns is None:
        if not rows:
            raise ValueError("columns are required for an empty table")
        columns = list(rows[0].keys())
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


def render_jsonl(records: Iterable[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def render_json(payload: Mapping[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def read_csv_rows(path: Path) -> List[Dict[str, str]]:
    """Reader for files written by render_csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_json(path: Path, producer: str) -> Dict[str, Any]:
    """Load a JSON output; a missing file names the command that writes it."""
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(f"{path} not found; run `fedleak {producer}` first")
    return json.loads(path.read_text(encoding="utf-8"))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class OutputSession:
    """
    Owns the files one command writes into output_dir.

    On a clean exit the manifest is written last; on an exception every data
    file written so far is removed so no half-finished run looks complete.
    """

    def __init__(self, output_dir: Path, command: str, config_hash: str, seed: int, workers: int = 1):
        self.output_dir = Path(output_dir)
        self.written: List[str] = []
        self.manifest = RunManifest(
            command=command,
            config_hash=config_hash,
            tool_version=__version__,
            seed=seed,
            workers=workers,
            started_at=_now(),
        )

    def __enter__(self) -> "OutputSession":
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            self._write_manifest()
            return False
        logger.error(f"{self.manifest.command} failed; removing {len(self.written)} partial output(s)")
        for name in self.written:
            try:
                os.remove(self.output_dir / name)
            except OSError as e:
                logger.warning(f"Could not remove partial output {name}: {e}")
        self.written.clear()
        return False

    def add_seed_plan(self, replicate: int, stream: Sequence[int]) -> None:
        self.manifest.seed_plan.append(SeedPlanEntry(replicate=replicate, stream=list(stream)))

    def write_text(self, name: str, text: str) -> Path:
        path = self.output_dir / name
        # newline="" keeps '\n' on every platform
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        if name not in self.written:
            self.written.append(name)
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, name: str, rows: Sequence[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> Path:
        return self.write_text(name, render_csv(rows, columns))

    def write_jsonl(self, name: str, records: Iterable[Mapping[str, Any]]) -> Path:
        return self.write_text(name, render_jsonl(records))

    def write_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        return self.write_text(name, render_json(payload))

    def _write_manifest(self) -> None:
        self.manifest.finished_at = _now()
        self.manifest.outputs = list(self.written)
        path = self.output_dir / MANIFEST_FILE
        path.write_text(self.manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
