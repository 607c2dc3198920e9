"""PRAM visual localization: landmark maps, recognition and pose estimation."""

from ._pram import *  # noqa: F401,F403
from ._pram import PramError, __doc__  # noqa: F401

__version__ = "0.1.0"
