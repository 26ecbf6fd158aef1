import os

# keep BLAS single-threaded: the suite runs streams of small matrix products
# where thread-pool handoff costs a hundredfold more than the math
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from minnsim.runtime import limit_blas_threads

limit_blas_threads(1)
