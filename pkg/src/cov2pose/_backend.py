"""Pick the compiled kernels when available, numpy otherwise.

Set ``COV2POSE_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("COV2POSE_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
    NAME = "python"
else:
    try:
        from . import _kernels as kernels
        NAME = "compiled"
    except ImportError:  # extension not built
        kernels = _fallback
        NAME = "python"

try:
    from . import _kernels as compiled
except ImportError:
    compiled = None
