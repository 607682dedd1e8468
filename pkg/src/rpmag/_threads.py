"""Pin BLAS thread pools to a single thread.

The package's linear algebra is dominated by long stacks of matrices a few
dozen rows across; multi-threaded BLAS adds synchronisation overhead that
far exceeds the arithmetic (an order of magnitude here). Set
``RPMAG_BLAS_THREADS`` to a thread count to override, or to ``0`` to leave
the BLAS defaults untouched.
"""

import os

_requested = os.environ.get("RPMAG_BLAS_THREADS", "1")

_controller = None
try:
    limit = int(_requested)
except ValueError:
    limit = 1
if limit > 0:
    try:
        from threadpoolctl import threadpool_limits

        # keep a reference so the limit stays in force for the process
        _controller = threadpool_limits(limits=limit, user_api="blas")
    except Exception:  # pragma: no cover - threadpoolctl missing or BLAS unknown
        _controller = None
