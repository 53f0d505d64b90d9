"""Selects the training-kernel implementation at import time.

The compiled Cython core is preferred. Set ``MLAB_PURE_PYTHON=1`` to force
the numpy fallback, e.g. when comparing the two.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_KERNELS = {"python": _pykernels}

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None
else:
    _KERNELS["compiled"] = _kernels

if os.environ.get("MLAB_PURE_PYTHON", "").strip() not in ("", "0") or _kernels is None:
    DEFAULT = "python"
else:
    DEFAULT = "compiled"

logger.debug("mlab kernel backend: %s", DEFAULT)


def available():
    return sorted(_KERNELS)


def get_kernels(name=None):
    name = DEFAULT if name is None else name
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}") from None
