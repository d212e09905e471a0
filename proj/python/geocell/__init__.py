"""Cross-view geolocalization: cell layout, embedding model, retrieval."""

from geocell._core import *  # noqa: F401,F403
from geocell._core import __doc__  # noqa: F401

__version__ = "0.1.0"
