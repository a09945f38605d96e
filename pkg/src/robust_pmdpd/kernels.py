"""Selects the rollout backend at import time.

The compiled extension is used when it is importable, unless
``ROBUST_PMDPD_PURE_PYTHON=1`` is set, in which case the numpy version runs.
"""
import os

from . import _rollout_py

BACKEND = "numpy"
rollout_returns = _rollout_py.rollout_returns

if os.environ.get("ROBUST_PMDPD_PURE_PYTHON") != "1":
    try:
        from . import _rollout as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        rollout_returns = _compiled.rollout_returns

py_rollout_returns = _rollout_py.rollout_returns
