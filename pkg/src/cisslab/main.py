#!/usr/bin/env python3
"""
cisslab command line.

Subcommands: gen-data, run, ablate, report, augment. Exit codes: 0 on
success, 2 on configuration or usage errors, 1 on any other failure.
"""

import argparse
import json
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from .errors import ConfigurationError
from .structured_logger import configure_logging, get_logger

log = get_logger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_scenario_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="Scenario file (.json, .yaml or .yml)")
    parser.add_argument("--preset", default=None, help="Built-in scenario preset (s8, s16, s15_1); default s8")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config field, e.g. --set augment.tau=0.5")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--method", choices=["ssul", "ssul_m", "joint"])
    parser.add_argument("--tau", type=float)
    parser.add_argument("--protocol", choices=["overlapped", "disjoint"])
    parser.add_argument("--memory-size", type=int)
    parser.add_argument("--out", help="Output directory (default $CISS_LAB_OUT/<name>)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cisslab", description="Class-incremental semantic segmentation lab")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="Write task datasets and the evaluation set as raster files")
    _add_scenario_args(gen)

    run = sub.add_parser("run", help="Run one scenario")
    _add_scenario_args(run)
    run.add_argument("--resume", help="Checkpoint to continue from")

    ablate = sub.add_parser("ablate", help="Run an ablation suite")
    _add_scenario_args(ablate)
    ablate.add_argument("--suite", required=True)
    ablate.add_argument("--seeds", default="0", help="Comma-separated seeds, e.g. 0,1,2")
    ablate.add_argument("--workers", type=int, default=None, help="Parallel processes (default $CISS_LAB_WORKERS)")

    report = sub.add_parser("report", help="Regenerate report.csv from a run directory's report.json")
    report.add_argument("run_dir")

    augment = sub.add_parser("augment", help="Apply label augmentation to one exported sample")
    augment.add_argument("--sample-dir", required=True)
    augment.add_argument("--stem", required=True)
    augment.add_argument("--checkpoint", help="Previous-task model; omit at task 1")
    augment.add_argument("--scores", help="Stored score raster of the previous model, one channel per class")
    augment.add_argument("--score-classes", help="Class id of each score channel in ascending order, e.g. 0,1,2,3")
    augment.add_argument("--scores-out", help="Also write the previous model's scores as a raster")
    augment.add_argument("--tau", type=float, default=0.7)
    augment.add_argument("--no-saliency", action="store_true")
    augment.add_argument("--no-unknown", action="store_true")
    augment.add_argument("--no-pseudo-labels", action="store_true")
    augment.add_argument("--output", required=True, help="Path of the augmented label raster")
    return parser


def _scenario_from_args(args):
    from .scenario_config import load_scenario

    overrides = list(args.overrides)
    for flag, key in (
        ("seed", "seed"),
        ("method", "method"),
        ("tau", "augment.tau"),
        ("protocol", "data.protocol"),
        ("memory_size", "memory.capacity"),
        ("out", "output_dir"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_scenario(path=args.config, preset_name=args.preset, overrides=overrides)


def _prepare_output(args, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    configure_logging(level=args.log_level, log_file=os.path.join(out_dir, "run.log"))


def cmd_gen_data(args) -> int:
    from .harness import output_dir_for
    from .raster_io import export_sample
    from .synth import TaskSample, build_eval_scenes, build_task_dataset

    cfg = _scenario_from_args(args)
    resolved = cfg.resolved()
    out_dir = os.path.join(output_dir_for(cfg), "data")
    _prepare_output(args, out_dir)
    schedule = resolved.schedule
    for t in range(1, schedule.num_tasks + 1):
        samples = build_task_dataset(
            schedule, t, cfg.data.train_scenes_per_task, resolved.dataset_seed, cfg.data.protocol,
            resolved.geometry, cfg.augment.saliency_corruption,
        )
        for i, sample in enumerate(samples):
            export_sample(sample, os.path.join(out_dir, f"task_{t:02d}"), f"sample_{i:04d}")
    scenes = build_eval_scenes(schedule, cfg.data.eval_scenes, resolved.eval_seed, resolved.geometry)
    for i, scene in enumerate(scenes):
        sample = TaskSample(scene=scene, labels=scene.full_labels, saliency=scene.saliency, task=0)
        export_sample(sample, os.path.join(out_dir, "eval"), f"scene_{i:04d}")
    with open(os.path.join(out_dir, "schedule.json"), "w", encoding="utf-8") as f:
        json.dump(schedule.to_dict(), f, indent=2, sort_keys=True)
    log.info("Data written", extra={"output_dir": out_dir, "tasks": schedule.num_tasks})
    return EXIT_OK


def cmd_run(args) -> int:
    from .harness import output_dir_for, run_scenario

    cfg = _scenario_from_args(args)
    out_dir = output_dir_for(cfg)
    _prepare_output(args, out_dir)
    report = run_scenario(cfg, resume=args.resume)
    final = report.final()
    print(json.dumps({"output_dir": out_dir, "step": final.step, "miou": final.miou}, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .harness import output_dir_for, run_ablation_suite

    cfg = _scenario_from_args(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"Invalid --seeds {args.seeds!r}") from None
    if args.workers is not None and args.workers < 1:
        raise ConfigurationError(f"--workers must be >= 1, got {args.workers}")
    _prepare_output(args, output_dir_for(cfg))
    result = run_ablation_suite(cfg, args.suite, seeds=seeds, workers=args.workers)
    print(result.to_table(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import regenerate_csv

    if not os.path.isdir(args.run_dir):
        raise ConfigurationError(f"Run directory not found: {args.run_dir}")
    print(regenerate_csv(args.run_dir))
    return EXIT_OK


def _read_scores(path: str, score_classes: Optional[str], shape):
    """Score dump as written by ``augment --scores-out``: (H, W, C) floats, one channel per class id."""
    import numpy as np

    from .heads import ScoreTensor
    from .raster_io import read_raster

    if not score_classes:
        raise ConfigurationError("--scores needs --score-classes")
    try:
        class_ids = tuple(int(c) for c in score_classes.split(","))
    except ValueError as e:
        raise ConfigurationError(f"Invalid --score-classes {score_classes!r}") from e
    if list(class_ids) != sorted(set(class_ids)):
        raise ConfigurationError(f"--score-classes must be ascending and distinct, got {score_classes!r}")
    if not os.path.exists(path):
        raise ConfigurationError(f"Score file not found: {path}")
    values = read_raster(path, squeeze=False).astype(np.float64)
    if values.shape != (*shape, len(class_ids)):
        raise ConfigurationError(
            f"Scores of shape {values.shape} do not match labels {shape} with {len(class_ids)} classes"
        )
    return ScoreTensor(values=values, class_ids=class_ids)


def cmd_augment(args) -> int:
    import numpy as np

    from .backbone import extract
    from .checkpoint import load_checkpoint
    from .heads import forward
    from .labelaug import AugmentConfig, augment_labels, previous_output, pseudo_label_count
    from .raster_io import import_sample, write_raster
    from .schedule import UNKNOWN, is_foreground

    if args.checkpoint and args.scores:
        raise ConfigurationError("Give either --checkpoint or --scores, not both")
    sample = import_sample(args.sample_dir, args.stem)
    cfg = AugmentConfig(
        tau=args.tau,
        use_saliency=not args.no_saliency,
        use_unknown=not args.no_unknown,
        use_pseudo_labels=not args.no_pseudo_labels,
    )

    scores = None
    if args.checkpoint:
        prev_model = load_checkpoint(args.checkpoint)
        scores = forward(prev_model, extract(prev_model.extractor, sample.scene.image))
    elif args.scores:
        scores = _read_scores(args.scores, args.score_classes, sample.labels.shape)

    prev, past = None, []
    if scores is not None:
        past = [c for c in scores.class_ids if is_foreground(c)]
        prev = previous_output(scores, past)
        if args.scores_out:
            write_raster(args.scores_out, scores.values)
    current = [c for c in sample.classes if c not in past]
    augmented = augment_labels(sample.labels, sample.saliency, prev, cfg, current, past)
    write_raster(args.output, augmented)
    summary = {
        "output": args.output,
        "pseudo_labels": pseudo_label_count(augmented, sample.labels, past) if past else 0,
        "score_classes": list(scores.class_ids) if scores is not None else [],
        "unknown": int(np.sum(augmented == UNKNOWN)),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "augment": cmd_augment,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        from dotenv import load_dotenv

        if os.path.exists(".env"):
            load_dotenv(".env")
    except ImportError:
        pass

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        from . import config

        args.log_level = (args.log_level or config.LOG_LEVEL_STR).upper()
        if args.log_level not in LOG_LEVELS:
            raise ConfigurationError(f"Invalid log level: {args.log_level}")
        configure_logging(level=args.log_level)
        config.log_initial_settings()
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValidationError) as e:
        log.error("Configuration error", extra={"error": str(e)})
        print(f"cisslab: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        log.error("Command failed", extra={"command": args.command, "error": str(e), "type": type(e).__name__})
        print(f"cisslab: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
