# utils/file_utils.py

"""Result file utilities: CSV rows, JSON summaries and the timing sidecar."""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List

from core.data_structures import CSV_COLUMNS, ExperimentResult, ResultRow
from core.errors import OutputError

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'json', 'both')


def _json_safe(value: Any) -> Any:
    """Non-finite floats become null so the summary stays strict JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(key): _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


def ensure_directory(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create output directory {path}: {e}") from e
    return path


def write_csv(rows: List[ResultRow], path: Path) -> Path:
    """Writes rows under the fixed header; an empty list gives a header-only file."""
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                writer.writerow([repr(float(row.scale)), repr(float(row.error)), row.metric, repr(float(row.s)),
                                 repr(float(row.r)), repr(float(row.alpha)), int(row.grid_n), int(row.grid_N)])
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def read_csv(path: Path) -> List[ResultRow]:
    """Reads rows written by write_csv."""
    try:
        with open(path, 'r', newline='', encoding='utf-8') as f:
            reader = csv.DictReader(f)
            return [ResultRow(float(r['scale']), float(r['error']), r['metric'], float(r['s']), float(r['r']),
                              float(r['alpha']), int(r['grid_n']), int(r['grid_N'])) for r in reader]
    except OSError as e:
        raise OutputError(f"cannot read {path}: {e}") from e


def write_json(data: Dict, path: Path) -> Path:
    """Sorted keys and fixed indentation, so equal data gives identical bytes."""
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_json_safe(data), f, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
            f.write('\n')
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def emit(result: ExperimentResult, out_dir: Path, fmt: str = 'both') -> List[Path]:
    """Writes results.csv and/or summary.json into out_dir; JSON mirrors the rows."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown output format {fmt!r}")
    out_dir = ensure_directory(Path(out_dir))
    written = []
    if fmt in ('csv', 'both'):
        written.append(write_csv(result.rows, out_dir / 'results.csv'))
    if fmt in ('json', 'both'):
        summary = dict(result.summary)
        summary['columns'] = list(CSV_COLUMNS)
        summary['rows'] = [list(row) for row in result.rows]
        written.append(write_json(summary, out_dir / 'summary.json'))
    for path in written:
        logger.info(f"[EMIT] wrote {get_display_path(path)}")
    return written


def write_timing(out_dir: Path, wall_time: float, experiment: str) -> Path:
    """Wall time lives in its own file so summary.json stays deterministic."""
    out_dir = ensure_directory(Path(out_dir))
    return write_json({'experiment': experiment, 'wall_time_seconds': round(float(wall_time), 3)},
                      out_dir / 'timing.json')


def format_duration(seconds: float) -> str:
    """Formats seconds as a human-readable string (s, min, h)."""
    if seconds < 60:
        return f"{seconds:.1f} s"
    if seconds < 3600:
        return f"{seconds / 60:.1f} min"
    return f"{seconds / 3600:.1f} h"


def get_display_path(file_path: Path) -> str:
    """Get a user-friendly display path, relative to the working directory if possible."""
    try:
        return str(Path(file_path).resolve().relative_to(Path.cwd().resolve()))
    except (ValueError, OSError):
        return str(file_path)
