"""
Metrics tables and the fold aggregation scheme.

Aggregation order, per model and metric:

1. per fold and class, mean over patients with a present entry;
2. per class, mean and (population) std over the fold values;
3. Avg: per fold, unweighted mean over classes of the step-1 values,
   then mean and std over folds.
"""

from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from oarseg.utils.errors import ValidationError

METRICS_COLUMNS = ["model", "fold", "patient", "class", "dice", "hd95_mm"]
METRICS = ("dice", "hd95_mm")


def metrics_frame(rows: Iterable[Dict]) -> pd.DataFrame:
    """MetricsTable from row dicts, with absent values as NaN."""
    frame = pd.DataFrame(list(rows), columns=METRICS_COLUMNS)
    frame["fold"] = frame["fold"].astype(int)
    for metric in METRICS:
        frame[metric] = frame[metric].astype(float)
    return frame


def read_metrics(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in METRICS_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"Metrics file {path} lacks columns {missing}", "VAL_002")
    return metrics_frame(frame.to_dict("records"))


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=0)) if len(values) else float("nan")


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def aggregate_model(frame: pd.DataFrame, class_order: Optional[List[str]] = None) -> Dict:
    """Aggregate the rows of a single model.

    Returns:
        {"classes": {class: {metric: {"mean", "std", "folds"}}},
         "avg": {metric: {"mean", "std", "folds"}},
         "flagged": [{"fold", "class", "metric"}]}
    """
    classes = class_order or sorted(frame["class"].unique())
    folds = sorted(frame["fold"].unique())
    report: Dict = {"classes": {}, "avg": {}, "flagged": []}

    for metric in METRICS:
        present = frame.dropna(subset=[metric])
        cell = present.groupby(["fold", "class"])[metric].mean()
        per_fold_class: Dict[int, Dict[str, float]] = {f: {} for f in folds}
        for fold in folds:
            for name in classes:
                if (fold, name) in cell.index:
                    per_fold_class[fold][name] = float(cell.loc[(fold, name)])
                else:
                    report["flagged"].append({"fold": int(fold), "class": name, "metric": metric})

        for name in classes:
            values = [per_fold_class[f][name] for f in folds if name in per_fold_class[f]]
            report["classes"].setdefault(name, {})[metric] = {
                "mean": _mean(values),
                "std": _std(values),
                "folds": {int(f): per_fold_class[f][name] for f in folds if name in per_fold_class[f]},
            }
        fold_avgs = {int(f): _mean(list(per_fold_class[f].values())) for f in folds if per_fold_class[f]}
        report["avg"][metric] = {
            "mean": _mean(list(fold_avgs.values())),
            "std": _std(list(fold_avgs.values())),
            "folds": fold_avgs,
        }
    return report


def aggregate(frame: pd.DataFrame, class_order: Optional[List[str]] = None) -> Dict[str, Dict]:
    """Aggregate every model of a MetricsTable; models are reported in sorted order."""
    if frame.empty:
        raise ValidationError("Cannot aggregate an empty metrics table", "VAL_001")
    return {
        model: aggregate_model(frame[frame["model"] == model], class_order)
        for model in sorted(frame["model"].unique())
    }


def _fmt(stats: Dict, digits: int) -> str:
    if np.isnan(stats["mean"]):
        return "n/a"
    return f"{stats['mean']:.{digits}f} ± {stats['std']:.{digits}f}"


def summary_table(report: Dict[str, Dict], class_order: Optional[List[str]] = None) -> pd.DataFrame:
    """One row per model: Dice and HD95 per class plus Avg, formatted mean ± std."""
    rows = []
    for model, agg in report.items():
        classes = class_order or list(agg["classes"])
        row = {"model": model}
        for name in classes + ["Avg"]:
            stats = agg["avg"] if name == "Avg" else agg["classes"][name]
            row[f"{name} Dice"] = _fmt(stats["dice"], 3)
            row[f"{name} HD95"] = _fmt(stats["hd95_mm"], 2)
        rows.append(row)
    return pd.DataFrame(rows)


def avg_dice(report: Dict[str, Dict], model: str) -> float:
    """Grand cross-class mean Dice of one model."""
    return report[model]["avg"]["dice"]["mean"]


def patient_mean_dice(frame: pd.DataFrame) -> pd.Series:
    """Cross-class mean Dice per (model, patient), indexed by patient."""
    present = frame.dropna(subset=["dice"])
    return present.groupby(["model", "patient"])["dice"].mean()
