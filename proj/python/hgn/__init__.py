"""Hierarchical gating network for sequential recommendation."""

from ._hgn import *  # noqa: F401,F403
from ._hgn import __doc__  # noqa: F401
