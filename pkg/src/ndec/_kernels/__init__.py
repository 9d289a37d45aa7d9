"""Kernel backend selection.

The hot loops (spike binning, LIF recurrence, IIR filtering) have two
interchangeable implementations: a numba-compiled one and a pure-numpy one.
Set ``NDEC_NO_NUMBA=1`` to force the numpy path; otherwise numba is used
when importable. Both backends produce bit-identical outputs.
"""

import os

from . import numpy_impl

RESET_NONE = numpy_impl.RESET_NONE
RESET_TO_ZERO = numpy_impl.RESET_TO_ZERO
RESET_BY_SUBTRACTION = numpy_impl.RESET_BY_SUBTRACTION

_FORCE_NUMPY = os.environ.get("NDEC_NO_NUMBA", "").lower() in ("1", "true", "yes")

if not _FORCE_NUMPY:
    try:
        from . import numba_impl as _impl
        _BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl
        _BACKEND = "numpy"
else:
    from . import numpy_impl as _impl
    _BACKEND = "numpy"

bin_counts = _impl.bin_counts
lif_sequence = _impl.lif_sequence
sos_forward = _impl.sos_forward
sos_bid_blocks = _impl.sos_bid_blocks


def backend_name():
    """Active kernel backend: "numba" or "numpy"."""
    return _BACKEND
