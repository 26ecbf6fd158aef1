"""Process-level runtime knobs shared by the CLI and experiment runners."""

import os

_limited = False


def limit_blas_threads(n=1):
    """Cap BLAS thread pools (idempotent).

    The workloads here are streams of small matrix products; thread-pool
    handoff costs dwarf the work itself, so runs are single-threaded per
    process and parallelism happens across runs.
    """
    global _limited
    if _limited:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)
    except Exception:
        pass
    _limited = True
