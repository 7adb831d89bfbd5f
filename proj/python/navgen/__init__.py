"""Navigational instruction generation: CAS commands, planning, realization and BLEU."""

from ._navgen import *  # noqa: F401,F403
from ._navgen import __version__  # noqa: F401
