"""Console entry point.

COKRIG_THREADS caps internal (BLAS) parallelism; the environment variables
must be set before numpy loads, so this module stays import-light.
"""

import os
import sys


def main(argv=None):
    cap = os.environ.get("COKRIG_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)
    from .cli import main as cli_main

    return cli_main(argv if argv is not None else sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
