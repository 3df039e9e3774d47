"""Classify sandbox samples as MALICIOUS or BENIGN from triggered behavioral indicators."""

__version__ = "0.1.0"

from .samples import DailyBatch, FeatureSpace, LabeledSample  # noqa: E402

__all__ = ["DailyBatch", "FeatureSpace", "LabeledSample", "__version__"]
