# utils/platform_utils.py

"""Platform and runtime utilities."""
import os
import platform
import sys
import threading
from typing import Dict, Optional

THREADS_ENV = 'MULTIPRODUCT_THREADS'

_thread_lock = threading.Lock()
_thread_count: Optional[int] = None


def get_thread_count() -> int:
    """Worker threads for sweeps and FFTs (CLI setting, then environment, then 1)."""
    with _thread_lock:
        if _thread_count is not None:
            return _thread_count
    raw = os.environ.get(THREADS_ENV, '').strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def set_thread_count(count: Optional[int]):
    """Sets the process-wide thread count; None restores the environment default."""
    global _thread_count
    with _thread_lock:
        _thread_count = None if count is None else max(1, int(count))


def get_platform_info() -> Dict:
    """Gets interpreter, platform and numerical library versions for result metadata."""
    import numpy
    import scipy
    info = {
        'python': platform.python_version(),
        'implementation': platform.python_implementation(),
        'system': platform.system(),
        'machine': platform.machine(),
        'numpy': numpy.__version__,
        'scipy': scipy.__version__,
    }
    try:
        import tqdm
        info['tqdm'] = tqdm.__version__
    except ImportError:  # pragma: no cover - tqdm is a hard requirement
        info['tqdm'] = None
    return info


def stderr_is_interactive() -> bool:
    """True when progress bars make sense on stderr."""
    try:
        return sys.stderr.isatty()
    except (AttributeError, ValueError):
        return False
