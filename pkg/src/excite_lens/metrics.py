"""Strength and extent of an excitation map, and per-unit peak scores."""

import math
from dataclasses import dataclass

import numpy as np

from .excitation import ExcitationMaps, aggregate_map

# Extent threshold: mean over spatial locations of the aggregate map
# (not the mean over all K*h*w unit values).
THRESHOLD_MODE = "mean_over_locations"


@dataclass
class MapStatistics:
    image_id: str
    brand_predicted: object  # BrandId
    strength: float
    extent: float
    threshold: float
    discarded_mass: float = 0.0


def _agg(maps):
    if isinstance(maps, ExcitationMaps):
        return aggregate_map(maps)
    a = np.asarray(maps, dtype=np.float64)
    return a.sum(axis=0) if a.ndim == 3 else a


def strength(maps):
    """Peak of the aggregate map. Accepts ExcitationMaps, (K,h,w) or (h,w)."""
    return float(_agg(maps).max())


def extent(maps):
    """Fraction of locations strictly above the mean of the aggregate map.

    Returns ``(extent, threshold)``. Constant maps give extent 0.
    """
    e = _agg(maps).ravel()
    hi, lo = float(e.max()), float(e.min())
    if hi == lo:
        return 0.0, hi
    t = min(math.fsum(e.tolist()) / e.size, hi)
    return float(np.count_nonzero(e > t)) / e.size, t


def unit_max_scores(maps):
    um = maps.unit_maps if isinstance(maps, ExcitationMaps) else np.asarray(maps)
    return um.reshape(um.shape[0], -1).max(axis=1).astype(np.float64)


def map_statistics(maps, brand_predicted=None):
    ext, t = extent(maps)
    return MapStatistics(image_id=maps.image_id, brand_predicted=brand_predicted,
                         strength=strength(maps), extent=ext, threshold=t,
                         discarded_mass=maps.discarded_mass)
