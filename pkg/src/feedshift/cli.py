"""Command-line entry points.

Subcommands mirror the pipeline stages (ingest, cohort, covariates,
score, match, effects, regress, report), plus ``run`` for the whole
study and ``synth`` for oracle data generation.  Stage subcommands are
independently resumable: each verifies its upstream artifacts against
the manifest and refuses stale inputs unless ``--force``.

Exit codes: 0 ok, 2 validation problem, 3 stage failure, 4 no overlap
between arms after pruning.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import CorpusError
from .estimate import NoOverlapError
from .study import StageError, Study, StudyConfig, ValidationError
from .synth import SynthConfig, SynthError, generate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_NO_OVERLAP = 4

_STAGE_COMMANDS = (
    "ingest",
    "cohort",
    "covariates",
    "score",
    "match",
    "effects",
    "regress",
    "report",
)


def _add_study_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="study config JSON")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, help="worker thread bound")
    parser.add_argument("--force", action="store_true", help="ignore stale inputs")
    parser.add_argument("--feed", help="feed id (overrides config)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    parser.add_argument("--lexicon", help="category lexicon path (overrides config)")
    parser.add_argument(
        "--min-baseline-days", type=float, help="minimum baseline span in days"
    )
    parser.add_argument(
        "--window", help="observation window as start,end (UTC seconds)"
    )
    parser.add_argument(
        "--centroid-window", help="feed centroid window as start,end (UTC seconds)"
    )
    parser.add_argument(
        "--aggregate",
        choices=("pooled", "per-post-mean"),
        help="per-user metric aggregation (overrides config)",
    )
    parser.add_argument(
        "--stratum-weighted",
        action="store_true",
        help="use size-weighted within-stratum ATEs instead of pooled means",
    )
    parser.add_argument(
        "--ngram-top-k", type=int, help="n-gram vocabulary size (overrides config)"
    )
    parser.add_argument(
        "--ngram-per-n",
        action="store_true",
        help="take top-k per n-gram size instead of pooled top-k",
    )


def _parse_span(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(",")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ValidationError(f"expected start,end integers, got {text!r}") from exc


def _load_config(args: argparse.Namespace) -> StudyConfig:
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config not found: {path}")
    obj = json.loads(path.read_text(encoding="utf-8"))
    config = StudyConfig.from_json(obj, out_dir=args.out or obj.get("out_dir"))
    if args.threads:
        config.threads = args.threads
    if args.feed:
        config.feed_id = args.feed
    if args.seed is not None:
        config.seed = args.seed
    if args.lexicon:
        config.lexicon = args.lexicon
    if args.min_baseline_days is not None:
        config.min_baseline_days = args.min_baseline_days
    if args.window:
        config.window = _parse_span(args.window)
    if args.centroid_window:
        config.centroid_window = _parse_span(args.centroid_window)
    if args.aggregate:
        config.aggregate = args.aggregate
    if args.stratum_weighted:
        config.effect_variant = "stratum-weighted"
    if args.ngram_top_k is not None:
        config.ngram_top_k = args.ngram_top_k
    if getattr(args, "ngram_per_n", False):
        config.ngram_per_n = True
    config.validate()
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feedshift",
        description="Quasi-experimental analysis of feed exposure effects on language",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute every stage end-to-end")
    _add_study_args(run_p)

    for stage in _STAGE_COMMANDS:
        stage_p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_study_args(stage_p)
        if stage == "score":
            stage_p.add_argument(
                "--model", help="reuse a serialized ensemble instead of training"
            )

    synth_p = sub.add_parser("synth", help="generate a synthetic event log + truth")
    synth_p.add_argument("--config", required=True, help="synth config JSON")
    synth_p.add_argument("--out", required=True, help="output directory")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
            cfg = SynthConfig.from_json(obj)
            events_path, _ = generate(cfg, args.out)
            print(f"wrote {events_path}")
            return EXIT_OK
        config = _load_config(args)
        study = Study(config)
        if args.command == "run":
            study.run_all(force=args.force)
            print(f"study bundle: {study.out}")
            return EXIT_OK
        kwargs = {}
        if args.command == "score" and getattr(args, "model", None):
            kwargs["model_path"] = args.model
        study.run_stage(args.command, force=args.force, **kwargs)
        print(f"stage {args.command} done: {study.out}")
        return EXIT_OK
    except (ValidationError, SynthError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NoOverlapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_OVERLAP
    except (StageError, CorpusError, Exception) as exc:  # noqa: BLE001
        stage = getattr(args, "command", "unknown")
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
