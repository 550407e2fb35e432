"""Finger-tapping severity pipeline: hand landmarks to kinematic features to a 0-4 score.

Modules, in pipeline order: ``ingest`` (files), ``signals`` (angle signal, peaks),
``features`` (65-feature catalog), ``stats`` (metrics, agreement, tests), ``model``
(boosted trees, elimination, LOPO-CV), ``explain`` (Shapley values), ``synth``
(synthetic recordings) and ``cli``.
"""

from .config import __version__
from .features import CATALOG_VERSION, FEATURE_NAMES

__all__ = ["__version__", "CATALOG_VERSION", "FEATURE_NAMES"]
