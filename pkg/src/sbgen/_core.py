"""Backend selection for the chain kernel.

The compiled extension is preferred; set ``SBGEN_PURE_PYTHON=1`` to force the
pure-Python fallback (used by the benchmark and the backend-equivalence tests).
"""

import os

from . import _chain_py

try:
    if os.environ.get("SBGEN_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _chain as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _chain_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"
kernel = BACKENDS[BACKEND]


def get_kernel(name=None):
    if name is None:
        return kernel
    try:
        return BACKENDS[name]
    except KeyError:
        raise ImportError(f"chain backend {name!r} is not available") from None
