"""
Data pipeline: case IO, phantoms, preprocessing, augmentation, sampling, folds.
"""

from oarseg.data.augment import AugmentPolicy, augment, rotate_scale
from oarseg.data.case import PatientCase, read_case, read_dataset, write_case, write_dataset
from oarseg.data.folds import FoldSplit, make_folds
from oarseg.data.preprocessing import crop_nonzero, median_spacing, preprocess_case, preprocess_dataset, resample, zscore
from oarseg.data.sampling import PatchLoader, sample_patch
from oarseg.data.synth import ROSTERS, class_histogram, synth_generate
