#!/usr/bin/env python3
"""
Index-ordered fan-out over a thread or process pool.

Results always come back in input order, so anything folded from them is
independent of the worker count and of completion order.
"""

from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor, as_completed

from console import log


def ordered_map(fn, items, workers=1, processes=False, label=None):
    """Apply fn to every item and return the results in input order.

    With workers <= 1 the items run inline. Exceptions raised by fn propagate;
    callers that must survive per-item failures catch inside fn.
    """
    items = list(items)
    total = len(items)
    if total == 0:
        return []

    if workers <= 1 or total == 1:
        results = []
        for done, item in enumerate(items, 1):
            results.append(fn(item))
            _progress(label, done, total)
        return results

    executor_cls = ProcessPoolExecutor if processes else ThreadPoolExecutor
    results = [None] * total
    with executor_cls(max_workers=workers) as executor:
        futures = {executor.submit(fn, item): i for i, item in enumerate(items)}
        done = 0
        for future in as_completed(futures):
            results[futures[future]] = future.result()
            done += 1
            _progress(label, done, total)
    return results


def _progress(label, done, total):
    if label is None:
        return
    if done % max(1, total // 10) == 0 or done == total:
        log(f"{label}: {done}/{total} ({done / total * 100:.1f}%)")
