"""Top-down Excitation Backprop maps and brand-level statistics over them."""

from .excitation import ExcitationMaps, aggregate_map, excitation_backprop
from .metrics import MapStatistics, extent, strength, unit_max_scores
from .model import BrandId, ForwardTrace, Model, ModelGraph, forward, predict
from .modelfile import load_model, save_model
from .zoo import build_minires

__all__ = [
    "BrandId", "ExcitationMaps", "ForwardTrace", "MapStatistics", "Model", "ModelGraph",
    "aggregate_map", "build_minires", "excitation_backprop", "extent", "forward",
    "load_model", "predict", "save_model", "strength", "unit_max_scores",
]
