"""Federated vs. centralized student-success prediction at desk scale."""

from . import boost, data, fed, metrics, model
from .errors import FedRecError

__all__ = ["boost", "data", "fed", "metrics", "model", "FedRecError"]
__version__ = "0.1.0"
