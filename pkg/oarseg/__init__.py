"""
oarseg - 2D organ-at-risk segmentation networks, ensembling and evaluation.
"""

__version__ = "0.1.0"
__author__ = "oarseg Team"
__description__ = "Segmentation architectures, ensembling and evaluation on a numpy autodiff engine"
