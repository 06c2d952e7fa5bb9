# core/sweep_runner.py

"""Sweep execution with progress tracking."""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

from tqdm import tqdm

from utils.platform_utils import get_thread_count, stderr_is_interactive

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

ProgressCallback = Callable[[str, Dict], None]


class TqdmProgress:
    """progress_callback(operation, details) that drives one tqdm bar per operation."""

    def __init__(self, enabled: Optional[bool] = None):
        self.enabled = stderr_is_interactive() if enabled is None else bool(enabled)
        self._bars: Dict[str, tqdm] = {}
        self._lock = threading.Lock()

    def __call__(self, operation: str, details: Dict):
        if not self.enabled:
            return
        with self._lock:
            bar = self._bars.get(operation)
            if bar is None:
                bar = tqdm(total=details.get('total'), desc=operation, leave=False, unit='pt')
                self._bars[operation] = bar
            bar.n = details.get('done', bar.n)
            if 'item' in details:
                bar.set_postfix_str(str(details['item']), refresh=False)
            bar.refresh()
            if details.get('total') is not None and bar.n >= details['total']:
                bar.close()
                del self._bars[operation]

    def close(self):
        with self._lock:
            for bar in self._bars.values():
                bar.close()
            self._bars.clear()


def log_progress(operation: str, details: Dict):
    """Plain-logging progress callback for non-interactive runs."""
    logger.debug(f"[SWEEP] {operation}: {details.get('done')}/{details.get('total')} {details.get('item', '')}")


def run_points(func: Callable[[T], R], items: Sequence[T], operation: str = 'sweep',
               progress_callback: Optional[ProgressCallback] = None,
               threads: Optional[int] = None) -> List[R]:
    """Evaluates func on every item concurrently; results come back in input order.

    The first exception raised by any point is re-raised after the pool shuts down.
    """
    items = list(items)
    total = len(items)
    workers = max(1, min(threads or get_thread_count(), total or 1))
    results: List[Optional[R]] = [None] * total
    if progress_callback:
        progress_callback(operation, {'done': 0, 'total': total})
    if workers == 1:
        for index, item in enumerate(items):
            results[index] = func(item)
            if progress_callback:
                progress_callback(operation, {'done': index + 1, 'total': total, 'item': item})
        return results

    done = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(func, item): index for index, item in enumerate(items)}
        for future in as_completed(futures):
            index = futures[future]
            results[index] = future.result()
            done += 1
            if progress_callback:
                progress_callback(operation, {'done': done, 'total': total, 'item': items[index]})
    return results
