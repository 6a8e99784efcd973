"""
scorelint - Command-line Application
Evaluate ABC scores, extract measure-wise plans and check score validity.
"""

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import List, Optional

from error_handler import ConfigError, EmptyCorpusError, ScoreLintError, error_handler
from evaluation_manager import EvaluationManager, summarize
from plan_extractor import write_plan
from report_renderer import (
    render_corpus_json, render_report_json, render_summary_csv, render_validity_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_EMPTY_CORPUS = 3


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML config file (default: $SCORELINT_CONFIG)")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes for directories")
    parser.add_argument("--seed", type=int, default=None, help="Pivot selection seed")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="scorelint",
                             description="Objective evaluation of symbolic scores written in ABC notation.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    evaluate = commands.add_parser("evaluate", help="Validate and score a file or a corpus directory")
    evaluate.add_argument("path", type=Path)
    evaluate.add_argument("--plan", type=Path, default=None,
                          help="Plan JSON for a file, or a directory of <stem>.json plans for a corpus")
    evaluate.add_argument("--report", choices=("json", "csv"), default="json")
    evaluate.add_argument("--out", type=Path, default=None, help="Write the report here instead of stdout")
    evaluate.add_argument("--jitter-strict", action="store_true", default=None,
                          help="Check tuplet onsets against the plain 64th grid")
    evaluate.add_argument("--per-part-structure", action="store_true", default=None,
                          help="Average per-part structure scores instead of merging parts")
    _common_options(evaluate)

    extract = commands.add_parser("extract-plan", help="Extract dense or sparse plans from valid scores")
    extract.add_argument("path", type=Path)
    extract.add_argument("--sparse", action="store_true", help="Keep only pivot measures")
    extract.add_argument("--out", type=Path, default=None,
                         help="Output directory (required for directories; stdout for a single file)")
    _common_options(extract)

    check = commands.add_parser("validate", help="Report score validity without metrics")
    check.add_argument("path", type=Path)
    check.add_argument("--out", type=Path, default=None)
    _common_options(check)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def _emit(text: str, out: Optional[Path]):
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(text.encode("utf-8"))
    logger.info(f"Wrote {out}")


def run_evaluate(manager: EvaluationManager, args: argparse.Namespace) -> int:
    if args.path.is_file():
        report = manager.evaluate_file(args.path, args.plan)
        if args.report == "csv":
            _emit(render_summary_csv(summarize([report])), args.out)
        else:
            _emit(render_report_json(report), args.out)
        return EXIT_OK

    evaluation = manager.evaluate_corpus(args.path, args.plan)
    if args.report == "csv":
        _emit(render_summary_csv(evaluation.summary), args.out)
    else:
        _emit(render_corpus_json(evaluation), args.out)
    summary = evaluation.summary
    logger.info(f"{summary.n_valid}/{summary.n_files} valid files")
    if not summary.comparable:
        logger.warning("Reports carry different config fingerprints and are not comparable")
    if summary.n_valid == 0:
        logger.error("No valid files in corpus")
        return EXIT_EMPTY_CORPUS
    return EXIT_OK


def run_extract(manager: EvaluationManager, args: argparse.Namespace) -> int:
    if args.path.is_dir() and args.out is None:
        logger.error("extract-plan on a directory needs --out")
        return EXIT_USAGE
    result = manager.extract_plans(args.path, args.out, args.sparse, args.seed)
    if not result.plans:
        logger.error("No valid scores to extract plans from")
        return EXIT_EMPTY_CORPUS
    if args.out is None:
        (plan,) = result.plans.values()
        sys.stdout.write(write_plan(plan).decode("utf-8"))
    for piece_id, selection in result.selections.items():
        logger.info(f"{piece_id}: pivots {list(selection.indices)} ({selection.weight_profile_id})")
    return EXIT_OK


def run_validate(manager: EvaluationManager, args: argparse.Namespace) -> int:
    results = manager.validate_path(args.path)
    _emit(render_validity_json(results), args.out)
    invalid = sum(not validity.is_valid for _, validity in results)
    logger.info(f"{len(results) - invalid}/{len(results)} valid files")
    return EXIT_OK


COMMANDS = {
    "evaluate": run_evaluate,
    "extract-plan": run_extract,
    "validate": run_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    overrides = {
        "jobs": args.jobs,
        "seed": args.seed,
        "jitter_strict": getattr(args, "jitter_strict", None),
        "per_part_structure": getattr(args, "per_part_structure", None),
    }
    try:
        manager = EvaluationManager.from_config(args.config, overrides)
        return COMMANDS[args.command](manager, args)
    except ConfigError as e:
        error_handler.handle_config_error(e, args.config or "defaults")
        return EXIT_USAGE
    except EmptyCorpusError as e:
        logger.error(str(e))
        return EXIT_EMPTY_CORPUS
    except OSError as e:
        error_handler.handle_file_access_error(e, str(getattr(e, "filename", None) or args.path))
        return EXIT_IO
    except ScoreLintError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.critical(f"Critical application error: {e}")
        logger.debug(f"Stack trace: {traceback.format_exc()}")
        error_handler.handle_unknown_error(e, args.command)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
