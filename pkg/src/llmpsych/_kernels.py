"""Kernel backend selection.

The compiled extension is used when it imports; setting
``LLMPSYCH_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("LLMPSYCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

varimax_sweeps = _impl.varimax_sweeps
varimax_criterion = _impl.varimax_criterion
key_correct = _impl.key_correct
agree_bias_rows = _impl.agree_bias_rows
