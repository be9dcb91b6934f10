"""
Metrics, aggregation, inter-model agreement, statistics and overlays.
"""

from oarseg.evaluation.aggregate import aggregate, metrics_frame, read_metrics, summary_table
from oarseg.evaluation.metrics import case_metrics, dice, hd95
from oarseg.evaluation.pairwise import pairwise_model_dice, pairwise_table
from oarseg.evaluation.stats import WilcoxonResult, median_fold_select, wilcoxon_signed_rank
from oarseg.evaluation.evaluate import auto_comparisons, compare_models, evaluate_predictions, score_volumes, write_reports
