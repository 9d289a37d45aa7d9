"""Converter from public primate-reaching recordings to NDEC v1 sessions."""

__version__ = "0.1.0"

from .convert import central_difference_velocity, convert_session, convert_tree
from .ndec_format import check_session_invariants, read_ndec, write_ndec
from .reader import SourceFormatError, load_recording
