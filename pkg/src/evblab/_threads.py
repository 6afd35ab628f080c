"""Worker-count policy: the EVBLAB_THREADS environment variable caps
parallelism everywhere; results never depend on the worker count."""

from __future__ import annotations

import os


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("EVBLAB_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)
