"""Worker-count control.

AUCSEG_THREADS caps how many worker threads loss reductions may use.
Results are identical for any setting: parallel work is split per class
pair and the partial results are combined in a fixed order on the caller
thread, so the floating point reduction order never changes.
"""
import os

from .errors import ValidationError

_ENV = "AUCSEG_THREADS"


def thread_count() -> int:
    raw = os.environ.get(_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError("%s must be a positive integer, got %r" % (_ENV, raw))
    if n < 1:
        raise ValidationError("%s must be >= 1, got %d" % (_ENV, n))
    return n


def run_tasks(fns):
    """Evaluate a list of thunks, returning results in list order.

    Uses a thread pool of size ``thread_count()`` when it is > 1. The
    output order (and therefore any downstream accumulation order) does
    not depend on the pool size.
    """
    n = thread_count()
    if n == 1 or len(fns) <= 1:
        return [fn() for fn in fns]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=min(n, len(fns))) as pool:
        futures = [pool.submit(fn) for fn in fns]
        return [f.result() for f in futures]
