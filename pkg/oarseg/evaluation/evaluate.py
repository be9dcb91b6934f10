"""
Scoring prediction sets against reference datasets and writing the reports.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from oarseg.data.case import PatientCase, read_dataset
from oarseg.data.preprocessing import preprocess_case
from oarseg.evaluation.aggregate import aggregate, metrics_frame, patient_mean_dice, summary_table
from oarseg.evaluation.metrics import case_metrics
from oarseg.evaluation.stats import wilcoxon_signed_rank
from oarseg.inference.ensemble import hard_labels
from oarseg.inference.predictions import PredictionSet
from oarseg.inference.sliding_window import ProbabilityVolume
from oarseg.utils.errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
AGGREGATE_FILE = "aggregate.json"
SUMMARY_FILE = "summary.csv"
STATS_FILE = "stats.json"


def reference_cases(
    refs_root: Path,
    spacing: Sequence[float],
    ids: Optional[Sequence[str]] = None,
) -> Dict[str, PatientCase]:
    """Reference cases preprocessed onto the grid the predictions were made on."""
    return {case.id: preprocess_case(case, spacing) for case in read_dataset(refs_root, ids)}


def score_volumes(
    model: str,
    volumes: Dict[str, Tuple[int, ProbabilityVolume]],
    refs: Dict[str, PatientCase],
    class_names: List[str],
    spacing: Sequence[float],
) -> pd.DataFrame:
    """MetricsTable rows for in-memory volumes keyed by case id."""
    rows = []
    for case_id in sorted(volumes):
        if case_id not in refs:
            raise ValidationError(f"No reference for predicted case {case_id}", "VAL_002")
        fold, vol = volumes[case_id]
        ref = refs[case_id]
        if ref.mask is None:
            raise ValidationError(f"Reference case {case_id} has no mask", "VAL_002")
        if vol.shape != ref.shape:
            raise DimensionError("evaluate", ref.shape, vol.shape)
        for row in case_metrics(hard_labels(vol), ref.mask, class_names, spacing):
            rows.append({"model": model, "fold": fold, "patient": case_id, **row})
    return metrics_frame(rows)


def evaluate_predictions(pset: PredictionSet, refs_root: Path) -> pd.DataFrame:
    """Score every case of a prediction directory."""
    refs = reference_cases(refs_root, pset.spacing, sorted(pset.folds))
    volumes = {case_id: (fold, vol) for case_id, fold, vol in pset.items()}
    logger.debug(f"Scoring {len(volumes)} cases of {pset.model}")
    return score_volumes(pset.model, volumes, refs, pset.class_names, pset.spacing)


def write_reports(out_dir: Path, frame: pd.DataFrame, class_order: Optional[List[str]] = None) -> Dict[str, Dict]:
    """metrics.csv, aggregate.json and the formatted summary.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / METRICS_FILE, index=False)
    report = aggregate(frame, class_order)
    with open(out_dir / AGGREGATE_FILE, "w") as f:
        json.dump(report, f, indent=2)
    summary_table(report, class_order).to_csv(out_dir / SUMMARY_FILE, index=False)
    return report


def paired_patient_scores(frame: pd.DataFrame, model_a: str, model_b: str) -> Tuple[np.ndarray, np.ndarray]:
    """Per-patient cross-class mean Dice of two models over their shared patients."""
    means = patient_mean_dice(frame)
    a, b = means.loc[model_a], means.loc[model_b]
    shared = sorted(set(a.index) & set(b.index))
    if not shared:
        raise ValidationError(f"{model_a} and {model_b} share no patients", "VAL_002")
    return a.loc[shared].to_numpy(), b.loc[shared].to_numpy()


def compare_models(frame: pd.DataFrame, model_a: str, model_b: str, mode: str = "auto") -> Dict:
    x, y = paired_patient_scores(frame, model_a, model_b)
    result = wilcoxon_signed_rank(x, y, mode=mode)
    return {"test": "wilcoxon", "a": model_a, "b": model_b, **result.to_dict()}


def is_ensemble(model: str) -> bool:
    return "+" in model


def auto_comparisons(frame: pd.DataFrame, mode: str = "auto") -> List[Dict]:
    """Best ensemble vs best single model, and best vs second-best single model.

    Models are ranked by their fold-aggregated Avg Dice; a comparison whose
    candidates do not exist is skipped.
    """
    report = aggregate(frame)
    ranked = sorted(report, key=lambda m: (-report[m]["avg"]["dice"]["mean"], m))
    singles = [m for m in ranked if not is_ensemble(m)]
    ensembles = [m for m in ranked if is_ensemble(m)]
    tests = []
    if ensembles and singles:
        tests.append({"name": "best_ensemble_vs_best_single", **compare_models(frame, ensembles[0], singles[0], mode)})
    if len(singles) >= 2:
        tests.append({"name": "best_single_vs_second_single", **compare_models(frame, singles[0], singles[1], mode)})
    if not tests:
        raise ValidationError("No model pair available for automatic comparison", "VAL_001")
    return tests
