"""Ordinal functional-outcome prognosis: models, metrics and validation."""

from .outcome import (CATEGORIES, THRESHOLDS, CategoryDistribution, ThresholdProfile, class_weights,
                      conditional_exceedance, to_category_distribution, to_threshold_profile)

__version__ = "0.1.0"

__all__ = [
    "CATEGORIES", "THRESHOLDS", "CategoryDistribution", "ThresholdProfile", "class_weights",
    "conditional_exceedance", "to_category_distribution", "to_threshold_profile",
]
