"""bevgen: conditional multi-view street image generation from BEV layouts."""

import os as _os

# BEVGEN_THREADS caps internal parallelism. BLAS pools size themselves
# when numpy first loads, so the cap must land before any submodule
# import; explicit user settings are left alone.
_cap = _os.environ.get("BEVGEN_THREADS", "")
if _cap.isdigit() and int(_cap) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

__version__ = "0.1.0"
