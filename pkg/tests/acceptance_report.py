"""Collects one verdict line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS = {}


@contextmanager
def criterion(number, title):
    """Record PASS when the block completes, FAIL (and re-raise) otherwise."""
    started = time.perf_counter()
    detail = []
    try:
        yield detail
    except BaseException as exc:
        RESULTS[str(number)] = (False, title, "; ".join(detail + [str(exc).splitlines()[0] if str(exc) else type(exc).__name__]),
                           time.perf_counter() - started)
        raise
    RESULTS[str(number)] = (True, title, "; ".join(detail), time.perf_counter() - started)


def lines():
    return [f"criterion {n}: {'PASS' if ok else 'FAIL'} - {title} ({secs:.1f}s){': ' + info if info else ''}"
            for n, (ok, title, info, secs) in sorted(RESULTS.items())]
