"""Monocular 3D detection building blocks (C++ core)."""

from ._mono3d import *  # noqa: F401,F403
from ._mono3d import __doc__  # noqa: F401
