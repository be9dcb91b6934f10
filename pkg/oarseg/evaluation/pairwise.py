"""
Inter-model agreement: Dice between the predictions of two models.
"""

import itertools
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from oarseg.data.folds import FoldSplit
from oarseg.evaluation.aggregate import aggregate_model, metrics_frame
from oarseg.evaluation.metrics import dice
from oarseg.utils.errors import ValidationError


def pair_rows(
    reference: Dict[str, np.ndarray],
    prediction: Dict[str, np.ndarray],
    folds: Dict[str, int],
    class_names: List[str],
    label: str,
) -> List[Dict]:
    """Metric rows with one model's labels standing in for the reference."""
    rows = []
    for case_id in sorted(folds):
        ref, pred = reference[case_id], prediction[case_id]
        for c, name in enumerate(class_names, start=1):
            d = dice(pred, ref, c)
            rows.append({
                "model": label,
                "fold": folds[case_id],
                "patient": case_id,
                "class": name,
                "dice": float("nan") if d is None else d,
                "hd95_mm": float("nan"),
            })
    return rows


def pairwise_model_dice(
    preds_by_model: Dict[str, Dict[str, np.ndarray]],
    split: FoldSplit,
    class_names: List[str],
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Symmetric model x model matrix of mean and std Avg Dice across folds.

    In each unordered pair the model that sorts first serves as the
    reference. The diagonal is NaN.

    Raises:
        ValidationError: If a model lacks a prediction for a case another model has
    """
    models = sorted(preds_by_model)
    cases = sorted(set().union(*[set(p) for p in preds_by_model.values()])) if models else []
    for model in models:
        missing = [c for c in cases if c not in preds_by_model[model]]
        if missing:
            raise ValidationError(f"Model {model} has no prediction for {missing[:5]}", "VAL_002")
    folds = {case_id: split.fold_of(case_id) for case_id in cases}

    mean = pd.DataFrame(np.nan, index=models, columns=models)
    std = pd.DataFrame(np.nan, index=models, columns=models)
    for a, b in itertools.combinations(models, 2):
        rows = pair_rows(preds_by_model[a], preds_by_model[b], folds, class_names, f"{a}|{b}")
        avg = aggregate_model(metrics_frame(rows), class_names)["avg"]["dice"]
        mean.loc[a, b] = mean.loc[b, a] = avg["mean"]
        std.loc[a, b] = std.loc[b, a] = avg["std"]
    return mean, std


def pairwise_table(mean: pd.DataFrame, std: pd.DataFrame, digits: int = 4) -> pd.DataFrame:
    """``mean ± std`` strings; the diagonal is ``-``."""
    table = pd.DataFrame("-", index=mean.index, columns=mean.columns)
    for a in mean.index:
        for b in mean.columns:
            if a != b and not np.isnan(mean.loc[a, b]):
                table.loc[a, b] = f"{mean.loc[a, b]:.{digits}f} ± {std.loc[a, b]:.{digits}f}"
    return table
