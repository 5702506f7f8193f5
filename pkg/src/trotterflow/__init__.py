"""Operator splitting for gradient flows in metric spaces."""

from .diagnostics import *  # noqa: F401,F403
from .scheme import *  # noqa: F401,F403

__version__ = "0.1.0"
