"""
Command-line entry point.

Every subcommand that writes an output directory also writes a
``run_manifest.json`` into it; ``oarseg rerun`` replays a command from one.
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from oarseg.data.case import PatientCase, read_dataset, write_dataset
from oarseg.data.folds import FoldSplit, make_folds
from oarseg.data.preprocessing import preprocess_case, preprocess_dataset
from oarseg.data.synth import ROSTERS, class_histogram, synth_generate
from oarseg.evaluation.aggregate import aggregate_model, read_metrics
from oarseg.evaluation.evaluate import (
    STATS_FILE,
    auto_comparisons,
    compare_models,
    score_volumes,
    write_reports,
)
from oarseg.evaluation.pairwise import pairwise_model_dice, pairwise_table
from oarseg.evaluation.stats import median_fold_select
from oarseg.evaluation.visualize import save_case_overlay
from oarseg.inference.ensemble import EnsembleSpec, ensemble_average, enumerate_subsets, hard_labels
from oarseg.inference.predictions import PREDICTIONS_INDEX, PredictionSet, predict_member, write_predictions
from oarseg.inference.sliding_window import ProbabilityVolume
from oarseg.models.params import comparison_report
from oarseg.models.spec import ARCHITECTURES, SCALE_PRESETS, ModelSpec
from oarseg.training.trainer import TrainConfig, Trainer
from oarseg.utils.config import PRESETS, Config
from oarseg.utils.errors import ConfigurationError, NumericError, OarsegError, ValidationError
from oarseg.utils.logging import Logger
from oarseg.utils.manifest import RunManifest, hash_inputs
from oarseg.utils.progress import ProgressTracker
from oarseg.verify import run_suite

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2

# case id -> (fold, volume)
Volumes = Dict[str, Tuple[int, ProbabilityVolume]]


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the validation code."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


@dataclass
class RunContext:
    """Resolved configuration and shared services of one command."""
    command: str
    argv: List[str]
    config: Config
    logger: Logger
    progress: ProgressTracker

    @property
    def workers(self) -> int:
        return 1 if self.config.get("runtime", "deterministic", False) else self.config.threads()

    def write_manifest(
        self,
        out_dir: Path,
        inputs: Sequence[Optional[str]] = (),
        seeds: Optional[Dict[str, int]] = None,
        started: Optional[float] = None,
    ) -> Path:
        manifest = RunManifest(
            command=self.command,
            argv=list(self.argv),
            config=self.config.as_dict(),
            seeds=dict(seeds or {}),
            input_hash=hash_inputs(inputs),
            deterministic=bool(self.config.get("runtime", "deterministic", False)),
            threads=self.workers,
            wall_seconds=round(time.time() - started, 3) if started else 0.0,
        )
        return manifest.write(out_dir)


# ----------------------------------------------------------------------
# Shared helpers


def _load_members(
    ctx: RunContext,
    paths: Sequence[str],
    cases: Optional[Sequence[PatientCase]],
    fold_only: bool = True,
) -> Tuple[List[str], List[str], List[float], Dict[str, Volumes]]:
    """Volumes of each member: a prediction directory, a checkpoint or a training run.

    Returns:
        (member names, class names, spacing, name -> volumes)
    """
    names: List[str] = []
    by_name: Dict[str, Volumes] = {}
    spacing: Optional[List[float]] = None
    class_names: Optional[List[str]] = None
    for path in paths:
        if (Path(path) / PREDICTIONS_INDEX).exists():
            pset = PredictionSet.load(Path(path))
            name, member_spacing = pset.model, pset.spacing
            volumes = {case_id: (fold, vol) for case_id, fold, vol in pset.items()}
        else:
            if cases is None:
                raise ValidationError(f"Member {path} is a checkpoint; --data is required", "VAL_002")
            name, member_spacing, volumes = predict_member(
                Path(path), cases, fold_only=fold_only,
                overlap=ctx.config.get("inference", "overlap", 0.5),
                batch=ctx.config.get("inference", "batch", 4),
                workers=ctx.workers, logger=ctx.logger, progress=ctx.progress,
            )
        if name in by_name:
            raise ValidationError(f"Duplicate member name {name}; train repeats with distinct --name", "VAL_003")
        if spacing is not None and list(member_spacing) != list(spacing):
            raise ValidationError(f"Member {name} was preprocessed to spacing {member_spacing}, not {spacing}", "VAL_003")
        first = next(iter(volumes.values()))[1]
        if class_names is not None and first.class_names != class_names:
            raise ValidationError(f"Member {name} predicts a different class roster", "VAL_003")
        spacing, class_names = list(member_spacing), list(first.class_names)
        names.append(name)
        by_name[name] = volumes
    return names, class_names, spacing, by_name


def _shared_cases(ctx: RunContext, by_name: Dict[str, Volumes]) -> List[str]:
    shared = sorted(set.intersection(*[set(v) for v in by_name.values()]))
    dropped = sorted(set.union(*[set(v) for v in by_name.values()]) - set(shared))
    if dropped:
        ctx.logger.warning(f"{len(dropped)} cases are not predicted by every member and are skipped")
    if not shared:
        raise ValidationError("Members share no predicted case", "VAL_001")
    return shared


def _average(
    ctx: RunContext,
    members: Sequence[str],
    by_name: Dict[str, Volumes],
    case_ids: Sequence[str],
    weights: Optional[Sequence[float]] = None,
) -> Volumes:
    """Probability average of ``members`` per case; the fold comes from the first member."""
    volumes: Volumes = {}
    for case_id in case_ids:
        folds = {by_name[m][case_id][0] for m in members}
        if len(folds) > 1:
            ctx.logger.warning(f"Members disagree on the fold of {case_id}: {sorted(folds)}")
        vols = [by_name[m][case_id][1] for m in members]
        volumes[case_id] = (by_name[members[0]][case_id][0], ensemble_average(vols, weights))
    return volumes


def _references(refs_root: str, spacing: Sequence[float], case_ids: Sequence[str]) -> Dict[str, PatientCase]:
    return {case.id: preprocess_case(case, spacing) for case in read_dataset(Path(refs_root), case_ids)}


def _prediction_sets(paths: Sequence[str]) -> List[PredictionSet]:
    psets = [PredictionSet.load(Path(p)) for p in paths]
    models = [p.model for p in psets]
    if len(set(models)) != len(models):
        raise ValidationError(f"Prediction sets repeat a model name: {models}", "VAL_003")
    spacings = {tuple(p.spacing) for p in psets}
    if len(spacings) > 1:
        raise ValidationError(f"Prediction sets use different spacings: {sorted(spacings)}", "VAL_003")
    return psets


def _metrics_paths(paths: Sequence[str]) -> List[Path]:
    found: List[Path] = []
    for raw in paths:
        path = Path(raw)
        found.extend(sorted(path.rglob("metrics.csv")) if path.is_dir() else [path])
    if not found:
        raise ValidationError(f"No metrics files under {list(paths)}", "VAL_002")
    return found


# ----------------------------------------------------------------------
# Commands


def cmd_synth(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    cases = synth_generate(args.patients, args.classes, tuple(args.extent), args.seed, args.roster, ctx.logger)
    out = Path(args.out)
    write_dataset(cases, out, extra={"roster": args.roster, "seed": args.seed})
    class_histogram(cases).to_csv(out / "class_histogram.csv", index=False)
    ctx.write_manifest(out, seeds={"seed": args.seed}, started=started)
    ctx.logger.info(f"Wrote {len(cases)} cases to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    config = ctx.config
    raw = read_dataset(Path(args.data), logger=ctx.logger)
    cases, target = preprocess_dataset(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ids = [case.id for case in cases]
    split_path = out / "folds.json"
    if split_path.exists():
        split = FoldSplit.load(split_path)
        if sorted(split.assignments) != sorted(ids) or split.k != args.folds:
            raise ValidationError(f"{split_path} does not match this dataset and --folds", "VAL_003")
    else:
        split = make_folds(ids, args.folds, config.get("training", "seed", 0))
        split.save(split_path)

    model_cfg = config.section("model")
    spec = ModelSpec.from_preset(
        args.arch,
        model_cfg.get("scale_preset", "paper"),
        in_channels=cases[0].channels,
        num_classes=cases[0].num_classes,
        img_size=model_cfg.get("img_size"),
        performer_features=model_cfg.get("performer_features"),
        window=model_cfg.get("window"),
        se_reduction=model_cfg.get("se_reduction"),
        seed=config.get("training", "seed", 0),
        name=args.name,
    )
    cfg = TrainConfig.from_config(config, epochs=args.epochs, iterations_per_epoch=args.iterations)
    header = {"name": spec.name, "target_spacing": list(target), "classes": cases[0].class_names}
    trainer = Trainer(spec, cfg, ctx.logger, ctx.progress, header=header)

    folds = [args.fold] if args.fold is not None else list(range(split.k))
    for fold in folds:
        trainer.train_fold(cases, split, fold, out / f"fold_{fold}")
    ctx.write_manifest(out, inputs=[args.data], seeds={"seed": cfg.seed, "split_seed": split.seed}, started=started)
    ctx.logger.info(f"Trained {spec.name} on folds {folds}; checkpoints in {out}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    cases = read_dataset(Path(args.data), logger=ctx.logger)
    out = Path(args.out)
    for member in args.model:
        names, class_names, spacing, by_name = _load_members(ctx, [member], cases, fold_only=not args.all_cases)
        name = names[0]
        target = out if len(args.model) == 1 else out / name
        write_predictions(target, name, class_names, spacing, by_name[name], members=[member])
        ctx.write_manifest(target, inputs=[args.data, member], started=started)
        ctx.logger.info(f"Wrote {len(by_name[name])} predictions of {name} to {target}")
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    cases = read_dataset(Path(args.data), logger=ctx.logger) if args.data else None
    names, class_names, spacing, by_name = _load_members(ctx, args.members, cases, fold_only=not args.all_cases)
    spec = EnsembleSpec(members=list(args.members), weights=list(args.weights or []))
    volumes = _average(ctx, names, by_name, _shared_cases(ctx, by_name), spec.weights)
    out = Path(args.out)
    label = "+".join(names)
    write_predictions(out, label, class_names, spacing, volumes, members=list(args.members))
    spec.save(out)
    ctx.write_manifest(out, inputs=[args.data, *args.members], started=started)
    ctx.logger.info(f"Wrote ensemble {label} ({len(volumes)} cases) to {out}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    cases = read_dataset(Path(args.data), logger=ctx.logger)
    names, class_names, spacing, by_name = _load_members(ctx, args.members, cases, fold_only=not args.all_cases)
    case_ids = _shared_cases(ctx, by_name)
    refs = _references(args.data, spacing, case_ids)

    frames = [score_volumes(name, {i: by_name[name][i] for i in case_ids}, refs, class_names, spacing)
              for name in names]
    subsets = enumerate_subsets(names, args.min_size)
    task = ctx.progress.start_task("sweep-ensembles", len(subsets))
    ranking = []
    best: Optional[Tuple[float, str, Volumes, EnsembleSpec]] = None
    for subset in subsets:
        label = subset.label
        volumes = _average(ctx, subset.members, by_name, case_ids)
        frame = score_volumes(label, volumes, refs, class_names, spacing)
        frames.append(frame)
        avg = aggregate_model(frame, class_names)["avg"]["dice"]
        ranking.append({"ensemble": label, "size": len(subset.members), "avg_dice": avg["mean"], "avg_dice_std": avg["std"]})
        # Ties keep the earlier subset (smaller, then lexicographic)
        if best is None or avg["mean"] > best[0]:
            best = (avg["mean"], label, volumes, subset)
        ctx.progress.advance(task)
    ctx.progress.complete_task(task)

    out = Path(args.out)
    table = pd.DataFrame(ranking, columns=["ensemble", "size", "avg_dice", "avg_dice_std"])
    table = table.sort_values("avg_dice", ascending=False, kind="mergesort").reset_index(drop=True)
    table.insert(0, "rank", np.arange(1, len(table) + 1))
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "sweep.csv", index=False)
    write_reports(out, pd.concat(frames, ignore_index=True), class_names)
    if best is not None:
        paths = dict(zip(names, args.members))
        write_predictions(out / "best", best[1], class_names, spacing, best[2],
                          members=[paths[m] for m in best[3].members])
        EnsembleSpec(members=[paths[m] for m in best[3].members]).save(out / "best")
        ctx.logger.info(f"Best of {len(subsets)} ensembles: {best[1]} (Avg Dice {best[0]:.4f})")
    ctx.write_manifest(out, inputs=[args.data, *args.members], started=started)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    psets = _prediction_sets(args.preds)
    case_ids = sorted(set().union(*[set(p.folds) for p in psets]))
    refs = _references(args.refs, psets[0].spacing, case_ids)
    frames = []
    for pset in psets:
        volumes = {case_id: (fold, vol) for case_id, fold, vol in pset.items()}
        frames.append(score_volumes(pset.model, volumes, refs, pset.class_names, pset.spacing))
    out = Path(args.out)
    report = write_reports(out, pd.concat(frames, ignore_index=True), psets[0].class_names)
    for model, agg in report.items():
        dice = agg["avg"]["dice"]
        ctx.logger.info(f"{model}: Avg Dice {dice['mean']:.4f} ± {dice['std']:.4f}")
        for flag in agg["flagged"]:
            ctx.logger.warning(f"{model}: no present {flag['metric']} for {flag['class']} in fold {flag['fold']}")
    ctx.write_manifest(out, inputs=[*args.preds, args.refs], started=started)
    return EXIT_OK


def cmd_pairwise(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    psets = _prediction_sets(args.preds)
    if len(psets) < 2:
        raise ValidationError("pairwise needs at least two prediction sets", "VAL_001")
    labels = {p.model: {case_id: hard_labels(vol) for case_id, _, vol in p.items()} for p in psets}
    folds = psets[0].folds
    split = FoldSplit(k=max(folds.values()) + 1, assignments=dict(folds), seed=0)
    mean, std = pairwise_model_dice(labels, split, psets[0].class_names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairwise_table(mean, std).to_csv(out / "pairwise.csv")
    mean.to_csv(out / "pairwise_mean.csv")
    std.to_csv(out / "pairwise_std.csv")
    ctx.write_manifest(out, inputs=args.preds, started=started)
    ctx.logger.info(f"Pairwise agreement of {len(psets)} models written to {out}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    paths = _metrics_paths(args.metrics)
    frames = [read_metrics(p) for p in paths]
    if args.auto:
        tests = auto_comparisons(pd.concat(frames, ignore_index=True), args.mode)
    elif args.models:
        tests = [compare_models(pd.concat(frames, ignore_index=True), *args.models, mode=args.mode)]
    elif len(frames) == 2 and all(f["model"].nunique() == 1 for f in frames):
        a, b = frames[0]["model"].iloc[0], frames[1]["model"].iloc[0]
        if a == b:
            a, b = f"{a}@{paths[0].parent.name or 'a'}", f"{b}@{paths[1].parent.name or 'b'}"
            if a == b:
                a, b = f"{a}#1", f"{b}#2"
            frames = [frames[0].assign(model=a), frames[1].assign(model=b)]
        tests = [compare_models(pd.concat(frames, ignore_index=True), a, b, args.mode)]
    else:
        raise ValidationError("Give two single-model metrics files, --models A B, or --auto", "VAL_001")

    for test in tests:
        flag = "significant" if test["significant"] else "not significant"
        ctx.logger.info(f"{test['a']} vs {test['b']}: W={test['statistic']:.1f} n={test['n']} p={test['p_value']:.4g} ({flag})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / STATS_FILE, "w") as f:
        json.dump({"tests": tests}, f, indent=2)
    ctx.write_manifest(out, inputs=[str(p) for p in paths], started=started)
    return EXIT_OK


def cmd_params(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    archs = list(ARCHITECTURES) if args.arch == "all" else [args.arch]
    report = comparison_report(archs, args.scale, args.in_channels, args.num_classes)
    print(report.to_string(index=False))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / "params.csv", index=False)
        ctx.write_manifest(out, started=started)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    reports = run_suite(seed=args.seed, tolerance=args.tolerance, names=args.only, logger=ctx.logger, progress=ctx.progress)
    failed = [r.name for r in reports if not r.passed]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [{"name": r.name, "max_rel_err": r.max_rel_err, "passed": r.passed, "elements": r.elements} for r in reports]
        pd.DataFrame(rows).to_csv(out / "gradcheck.csv", index=False)
        ctx.write_manifest(out, seeds={"seed": args.seed}, started=started)
    if failed:
        ctx.logger.error(f"Gradient checks failed: {failed}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_visualize(args: argparse.Namespace, ctx: RunContext) -> int:
    started = time.time()
    psets = _prediction_sets(args.preds)
    case_ids = sorted(set.intersection(*[set(p.folds) for p in psets]))
    refs = _references(args.refs, psets[0].spacing, case_ids)
    labels: Dict[str, Dict[str, np.ndarray]] = {}
    fold_scores: Dict[str, Dict[int, float]] = {}
    for pset in psets:
        volumes = {case_id: (pset.folds[case_id], pset.volume(case_id)) for case_id in case_ids}
        frame = score_volumes(pset.model, volumes, refs, pset.class_names, pset.spacing)
        fold_scores[pset.model] = aggregate_model(frame, pset.class_names)["avg"]["dice"]["folds"]
        labels[pset.model] = {case_id: hard_labels(vol) for case_id, (_, vol) in volumes.items()}

    folds = sorted(set.intersection(*[set(s) for s in fold_scores.values()]))
    if not folds:
        raise ValidationError("Prediction sets share no scored fold", "VAL_001")
    fold = folds[median_fold_select({m: [s[f] for f in folds] for m, s in fold_scores.items()})]
    chosen = [i for i in case_ids if psets[0].folds[i] == fold][: args.max_cases]

    out = Path(args.out)
    for case_id in chosen:
        ref = refs[case_id]
        path = save_case_overlay(out, case_id, ref.image[0], ref.mask, {m: labels[m][case_id] for m in labels})
        ctx.logger.info(f"Wrote {path}")
    ctx.write_manifest(out, inputs=[*args.preds, args.refs], started=started)
    ctx.logger.info(f"Median fold {fold}: {len(chosen)} overlays in {out}")
    return EXIT_OK


def cmd_rerun(args: argparse.Namespace, ctx: RunContext) -> int:
    manifest = RunManifest.read(Path(args.manifest))
    ctx.logger.info(f"Replaying: oarseg {' '.join(manifest.argv)}")
    return run(_strip_config(manifest.argv), config_payload=manifest.config)


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunContext], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "ensemble": cmd_ensemble,
    "sweep-ensembles": cmd_sweep,
    "eval": cmd_eval,
    "pairwise": cmd_pairwise,
    "stats": cmd_stats,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
    "visualize": cmd_visualize,
    "rerun": cmd_rerun,
}


# ----------------------------------------------------------------------
# Parser


def build_parser() -> Tuple[ArgumentParser, Dict[str, ArgumentParser]]:
    """Top-level parser and the subparser of every command."""
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding any flag or config section")
    common.add_argument("--threads", type=int, help="Worker threads (capped by OARSEG_THREADS)")
    common.add_argument("--deterministic", action="store_true", default=None, help="Single worker, fixed ordering")
    common.add_argument("--log-level", help="Console log level")
    protocol = ArgumentParser(add_help=False, parents=[common])
    protocol.add_argument("--preset", choices=sorted(PRESETS), help="Protocol preset merged over the defaults")

    parser = ArgumentParser(prog="oarseg", description="Organ-at-risk segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: Dict[str, ArgumentParser] = {}

    def add(name: str, help_text: str, base: ArgumentParser = protocol) -> ArgumentParser:
        subs[name] = sub.add_parser(name, parents=[base], help=help_text)
        return subs[name]

    p = add("synth", "Generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=24)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--roster", choices=sorted(ROSTERS), default="pelvis")
    p.add_argument("--extent", type=int, nargs=3, default=[16, 96, 96], metavar=("D", "H", "W"))

    p = add("train", "Train one architecture with k-fold cross validation")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=ARCHITECTURES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fold", type=int, help="Train only this fold")
    p.add_argument("--name", help="Model name; distinguishes repeated trainings of one architecture")
    p.add_argument("--epochs", type=int)
    p.add_argument("--iterations", type=int, help="Steps per epoch")
    p.add_argument("--seed", type=int)

    p = add("infer", "Predict cases with checkpoints or training runs")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--all-cases", action="store_true", help="Predict every case, not only held-out folds")

    p = add("ensemble", "Probability-average several members")
    p.add_argument("--members", nargs="+", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", type=float, nargs="+")
    p.add_argument("--all-cases", action="store_true")

    p = add("sweep-ensembles", "Evaluate every member subset and rank by Avg Dice")
    p.add_argument("--members", nargs="+", required=True)
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--all-cases", action="store_true")

    p = add("eval", "Score prediction sets against references")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)

    p = add("pairwise", "Dice agreement between the predictions of models")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("stats", "Paired Wilcoxon signed-rank tests")
    p.add_argument("--metrics", nargs="+", required=True, help="metrics.csv files or directories holding them")
    p.add_argument("--test", choices=["wilcoxon"], default="wilcoxon")
    p.add_argument("--mode", choices=["auto", "exact", "approx"], default="auto")
    p.add_argument("--models", nargs=2, metavar=("A", "B"))
    p.add_argument("--auto", action="store_true", help="Best ensemble vs best single, best vs second single")
    p.add_argument("--out", required=True)

    p = add("params", "Parameter counts against the published table", common)
    p.add_argument("--arch", choices=list(ARCHITECTURES) + ["all"], default="all")
    p.add_argument("--preset", dest="scale", choices=sorted(SCALE_PRESETS), default="paper")
    p.add_argument("--in-channels", type=int, default=1)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--out")

    p = add("gradcheck", "Finite-difference verification of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--only", nargs="+", help="Restrict to these checks")
    p.add_argument("--out")

    p = add("visualize", "PNG overlays of the median fold")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-cases", type=int, default=3)

    p = add("rerun", "Replay a command from its run manifest")
    p.add_argument("manifest")

    return parser, subs


def _flat_overrides(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Top-level non-section entries of a config file are flag defaults."""
    return {k.replace("-", "_"): v for k, v in payload.items() if not isinstance(v, dict) and "." not in k}


def _read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"Config file not found: {path}", "CONF_001")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid config file {path}: {e}", "CONF_001")


def _strip_config(argv: Sequence[str]) -> List[str]:
    stripped, skip = [], False
    for token in argv:
        if skip:
            skip = False
        elif token == "--config":
            skip = True
        elif not token.startswith("--config="):
            stripped.append(token)
    return stripped


def _build_config(args: argparse.Namespace, config_payload: Optional[Dict[str, Any]]) -> Config:
    """Defaults < preset < config file < flags."""
    if config_payload is not None:
        config = Config()
        config.update(config_payload)
    else:
        config = Config(args.config, preset=getattr(args, "preset", None))
    if args.threads is not None:
        config.set("runtime", "threads", args.threads)
    if args.deterministic:
        config.set("runtime", "deterministic", True)
    if args.log_level:
        config.set("logging", "level", args.log_level)
    if args.command == "train" and args.seed is not None:
        config.set("training", "seed", args.seed)
    return config


def run(argv: Optional[Sequence[str]] = None, config_payload: Optional[Dict[str, Any]] = None) -> int:
    """Parse ``argv`` and execute one command.

    Args:
        argv: Arguments without the program name; ``sys.argv[1:]`` when None
        config_payload: Fully resolved configuration replacing ``--config`` (used by rerun)

    Returns:
        0 on success, 1 on invalid input, 2 on numeric failure
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    try:
        payload = config_payload if config_payload is not None else (
            _read_config_file(args.config) if args.config else {}
        )
        # Flat entries become defaults of the chosen command; explicit flags still win
        flags = _flat_overrides(payload)
        if flags:
            subs[args.command].set_defaults(**flags)
            args = parser.parse_args(argv)

        config = _build_config(args, config_payload)
        ctx = RunContext(
            command=args.command,
            argv=argv,
            config=config,
            logger=Logger(log_dir=getattr(args, "out", None), level=config.get("logging", "level", "INFO")),
            progress=ProgressTracker(show_bars=sys.stderr.isatty()),
        )
        return COMMANDS[args.command](args, ctx)
    except NumericError as e:
        Logger().error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except OarsegError as e:
        Logger().error(str(e))
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())
