"""
Sliding-window inference and ensembling.
"""

from oarseg.inference.ensemble import EnsembleSpec, ensemble_average, enumerate_subsets, hard_labels
from oarseg.inference.sliding_window import ProbabilityVolume, predict_slice, predict_volume, window_layout
from oarseg.inference.predictions import PredictionSet, predict_member, resolve_checkpoints, write_predictions
