"""
Evaluation Manager for scorelint
Coordinates parsing, validation and every metric family for single files,
corpora and plan extraction.
"""

import logging
import statistics
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from abc_parser import Severity, ValidationIssue, ValidationReport, parse_abc, validate
from adherence_metrics import (
    AdherenceResult, InstrumentJudge, UtilizationResult, evaluate_adherence, evaluate_utilization,
)
from config_manager import ScoreLintSettings, load_environment
from constraints_manager import InstrumentTable
from error_handler import (
    AbcSyntaxError, EmptyCorpusError, EmptyScoreError, ErrorHandler, LexError,
    NoApplicableMetricsError, SchemaError,
)
from plan_extractor import PivotSelection, PlanDocument, extract_plan, read_plan, select_pivots, write_plan
from playability_metrics import PlayabilityResult, evaluate_playability
from readability_metrics import ReadabilityResult, evaluate_readability
from score_model import Score
from structure_analyzer import StructureResult, analyze_structure

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
REPORT_SCHEMA_VERSION = 1
SCORE_SUFFIX = ".abc"

# Summary row order.
METRIC_ORDER = (
    "total_playability",
    "pitch_range",
    "monophonic",
    "pitch_span",
    "rhythmic_overlap",
    "total_readability",
    "rhythmic_jitter",
    "tie_complexity",
    "accidental_consistency",
    "enharmonic_directionality",
    "coverage",
    "active_density",
    "tempo_match",
    "key_match",
    "key_match_exact",
    "time_match",
    "instrument_match",
    "structure",
)


def _mean(values) -> Optional[Fraction]:
    applicable = [v for v in values if v is not None]
    if not applicable:
        return None
    return sum(applicable, Fraction(0)) / len(applicable)


def _flag(value: bool) -> Fraction:
    return Fraction(100) if value else Fraction(0)


@dataclass
class MetricReport:
    """Everything scorelint measured for one score file."""
    piece_id: str
    validity: ValidationReport
    config_fingerprint: str
    playability: Optional[PlayabilityResult] = None
    readability: Optional[ReadabilityResult] = None
    utilization: Optional[UtilizationResult] = None
    adherence: Optional[AdherenceResult] = None
    structure: Optional[StructureResult] = None
    external_similarity: Optional[Fraction] = None
    tool_version: str = TOOL_VERSION
    warnings: List[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return self.validity.is_valid

    def metric_values(self) -> Dict[str, Optional[Fraction]]:
        """Per-file value of every summary metric; None where not computed or not applicable."""
        values: Dict[str, Optional[Fraction]] = {name: None for name in METRIC_ORDER}
        if self.playability:
            records = self.playability.per_instrument
            values["total_playability"] = self.playability.total_playability_pct
            values["pitch_range"] = _mean(r.pitch_range_pct for r in records)
            values["pitch_span"] = _mean(r.pitch_span_pct for r in records)
            values["monophonic"] = _mean(r.monophonic_pct for r in records)
            values["rhythmic_overlap"] = _mean(r.overlap_pct for r in records)
        if self.readability:
            records = self.readability.per_instrument
            values["total_readability"] = self.readability.total_readability_pct
            values["rhythmic_jitter"] = _mean(r.jitter_pct for r in records)
            values["tie_complexity"] = _mean(r.tie_complexity_pct for r in records)
            values["accidental_consistency"] = _mean(r.accidental_consistency_pct for r in records)
            values["enharmonic_directionality"] = _mean(r.enharmonic_pct for r in records)
        if self.utilization:
            values["coverage"] = self.utilization.mean_coverage_pct
            values["active_density"] = self.utilization.mean_density_pct
        if self.adherence:
            values["tempo_match"] = _flag(self.adherence.tempo.matched)
            values["key_match"] = _flag(self.adherence.key.relative)
            values["key_match_exact"] = _flag(self.adherence.key.exact)
            values["time_match"] = _flag(self.adherence.time_match)
            values["instrument_match"] = self.adherence.instruments.match_pct
        if self.structure:
            values["structure"] = self.structure.structure_score
        return values


@dataclass(frozen=True)
class MetricDistribution:
    minimum: Fraction
    median: Fraction
    maximum: Fraction
    count: int


@dataclass
class CorpusSummary:
    """Corpus aggregate; means and distributions use valid files only."""
    n_files: int
    n_valid: int
    valid_pct: Fraction
    means: Dict[str, Optional[Fraction]]
    distributions: Dict[str, Optional[MetricDistribution]]
    comparable: bool
    config_fingerprints: Tuple[str, ...]
    error_stats: Dict[str, int]


@dataclass
class CorpusEvaluation:
    reports: List[MetricReport]
    summary: CorpusSummary


@dataclass
class ExtractionResult:
    """Plans extracted from valid scores, keyed by piece id."""
    plans: Dict[str, PlanDocument] = field(default_factory=dict)
    selections: Dict[str, PivotSelection] = field(default_factory=dict)
    written: List[Path] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)


def summarize(reports: Sequence[MetricReport]) -> CorpusSummary:
    """
    Aggregate per-file reports.

    Raises:
        EmptyCorpusError: If there are no reports
    """
    if not reports:
        raise EmptyCorpusError("No score files to summarize")
    valid = [r for r in reports if r.is_valid]
    means: Dict[str, Optional[Fraction]] = {}
    distributions: Dict[str, Optional[MetricDistribution]] = {}
    per_file = [r.metric_values() for r in valid]
    for name in METRIC_ORDER:
        values = sorted(v[name] for v in per_file if v[name] is not None)
        if not values:
            means[name] = None
            distributions[name] = None
            continue
        means[name] = sum(values, Fraction(0)) / len(values)
        distributions[name] = MetricDistribution(values[0], statistics.median(values), values[-1], len(values))

    fingerprints = tuple(sorted({r.config_fingerprint for r in reports}))
    error_stats = Counter(issue.code for r in reports for issue in r.validity.errors)
    return CorpusSummary(
        n_files=len(reports),
        n_valid=len(valid),
        valid_pct=Fraction(100 * len(valid), len(reports)),
        means=means,
        distributions=distributions,
        comparable=len(fingerprints) <= 1,
        config_fingerprints=fingerprints,
        error_stats=dict(sorted(error_stats.items())),
    )


def collect_score_files(path: Path) -> Tuple[Path, List[Path]]:
    """
    Root directory and sorted score files for a file or directory argument.

    Raises:
        FileNotFoundError: If the path does not exist
        EmptyCorpusError: If a directory holds no score files
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No such file or directory: {path}")
    if path.is_file():
        return path.parent, [path]
    files = sorted(p for p in path.rglob(f"*{SCORE_SUFFIX}") if p.is_file())
    if not files:
        raise EmptyCorpusError(f"No {SCORE_SUFFIX} files under {path}")
    return path, files


def plan_path_for(score_path: Path, plan_dir: Optional[Path]) -> Optional[Path]:
    """Matching plan file: same stem, .json suffix; None when absent."""
    if plan_dir is None:
        return None
    candidate = Path(plan_dir) / f"{score_path.stem}.json"
    return candidate if candidate.exists() else None


class EvaluationManager:
    """
    Runs the full metric suite.
    Holds the merged settings, the bound constraints table and their fingerprint.
    """

    def __init__(self, settings: ScoreLintSettings, table: InstrumentTable, fingerprint: str,
                 judge: Optional[InstrumentJudge] = None):
        self.settings = settings
        self.table = table
        self.fingerprint = fingerprint
        self.judge = judge
        self.error_handler = ErrorHandler()

    @classmethod
    def from_config(cls, config_path: Optional[str] = None,
                    overrides: Optional[Dict[str, Any]] = None,
                    judge: Optional[InstrumentJudge] = None) -> "EvaluationManager":
        settings, table, fingerprint = load_environment(config_path, overrides)
        logger.info(f"Configuration fingerprint {fingerprint[:12]}")
        return cls(settings, table, fingerprint, judge)

    # single file

    def load_score(self, text: str, piece_id: str) -> Tuple[Optional[Score], ValidationReport]:
        """Parse and validate; parse failures come back as error issues."""
        try:
            score = parse_abc(text, strict=False)
        except AbcSyntaxError as e:
            info = self.error_handler.handle_parse_error(e, piece_id)
            return None, ValidationReport((ValidationIssue(Severity.ERROR, info.issue_code, str(e)),))
        return score, validate(score)

    def load_plan(self, plan_path: Path, warnings: List[str]) -> Optional[PlanDocument]:
        try:
            return read_plan(Path(plan_path).read_bytes())
        except SchemaError as e:
            info = self.error_handler.handle_plan_error(e, str(plan_path))
            warnings.append(f"{info.issue_code}: {e}")
            return None

    def evaluate_text(self, text: str, piece_id: str, plan: Optional[PlanDocument] = None,
                      warnings: Optional[List[str]] = None) -> MetricReport:
        """Evaluate ABC text; metric sections stay empty unless the score is valid."""
        score, validity = self.load_score(text, piece_id)
        report = MetricReport(piece_id, validity, self.fingerprint, warnings=list(warnings or []))
        if score is None or not validity.is_valid:
            logger.info(f"{piece_id}: invalid ({', '.join(i.code for i in validity.errors)})")
            return report

        for part in score.parts:
            binding = self.table.bind_part(part)
            if binding.used_default:
                report.warnings.append(f"UNKNOWN_INSTRUMENT: part {part.label!r} uses default constraints")

        try:
            report.playability = evaluate_playability(score, self.table)
            report.readability = evaluate_readability(score, self.table, self.settings.jitter_strict)
        except NoApplicableMetricsError as e:
            report.warnings.append(f"NO_APPLICABLE_METRICS: {e}")
        report.utilization = evaluate_utilization(score, self.table)

        try:
            report.structure = analyze_structure(score, self.settings.max_structure_points,
                                                 self.settings.per_part_structure,
                                                 self.settings.structure_window_points)
            if report.structure.decimated:
                report.warnings.append("STRUCTURE_DECIMATED: octave doublings dropped before analysis")
            if report.structure.n_windows > 1:
                windows = report.structure.n_windows
                report.warnings.append(f"STRUCTURE_WINDOWED: covered in {windows} onset windows")
        except EmptyScoreError as e:
            report.warnings.append(f"EMPTY_SCORE: {e}")

        if plan is not None:
            try:
                report.adherence = evaluate_adherence(plan, score, self.table,
                                                      self.settings.tempo_tolerance, self.judge)
            except ValueError as e:
                report.warnings.append(f"PLAN_SCHEMA_ERROR: {e}")
            else:
                if report.adherence.tempo.near_miss:
                    report.warnings.append("TEMPO_NEAR_MISS: score tempo is off by a factor of two")
        return report

    def evaluate_file(self, path: Path, plan_path: Optional[Path] = None,
                      piece_id: Optional[str] = None) -> MetricReport:
        """
        Evaluate one score file against an optional plan file.

        Raises:
            OSError: If the score or plan cannot be read
        """
        path = Path(path)
        piece_id = piece_id or path.name
        warnings: List[str] = []
        plan = self.load_plan(plan_path, warnings) if plan_path is not None else None
        try:
            text = path.read_bytes().decode("utf-8")
        except UnicodeDecodeError as e:
            info = self.error_handler.handle_parse_error(LexError(f"not UTF-8 text: {e.reason}"), piece_id)
            return MetricReport(piece_id, ValidationReport((ValidationIssue(Severity.ERROR, info.issue_code,
                                                                            str(e)),)),
                                self.fingerprint, warnings=warnings)
        return self.evaluate_text(text, piece_id, plan, warnings)

    # corpus

    def evaluate_corpus(self, path: Path, plan_dir: Optional[Path] = None,
                        jobs: Optional[int] = None) -> CorpusEvaluation:
        """
        Evaluate every score under a directory.

        Results come back in path-sorted order whatever the worker count.

        Raises:
            EmptyCorpusError: If no score file is found
        """
        root, files = collect_score_files(path)
        tasks = [(str(f), str(p) if (p := plan_path_for(f, plan_dir)) else None, f.relative_to(root).as_posix())
                 for f in files]
        jobs = jobs or self.settings.jobs
        if self.judge is not None and jobs > 1:
            logger.info("Instrument judge configured; evaluating serially")
            jobs = 1

        logger.info(f"Evaluating {len(tasks)} files with {jobs} worker(s)")
        if jobs <= 1 or len(tasks) == 1:
            reports = [self._evaluate_task(task) for task in tqdm(tasks, desc="Evaluating", disable=None)]
        else:
            with Pool(processes=jobs, initializer=_init_worker,
                      initargs=(self.settings, self.table, self.fingerprint)) as pool:
                reports = list(tqdm(pool.imap(_evaluate_job, tasks), total=len(tasks),
                                    desc="Evaluating", disable=None))
        return CorpusEvaluation(reports, summarize(reports))

    def _evaluate_task(self, task: Tuple[str, Optional[str], str]) -> MetricReport:
        path, plan_path, piece_id = task
        return self.evaluate_file(Path(path), Path(plan_path) if plan_path else None, piece_id)

    def validate_path(self, path: Path) -> List[Tuple[str, ValidationReport]]:
        """Validity of every score file under a path, without computing metrics."""
        root, files = collect_score_files(path)
        results = []
        for file in files:
            piece_id = file.relative_to(root).as_posix()
            try:
                text = file.read_bytes().decode("utf-8")
            except UnicodeDecodeError as e:
                info = self.error_handler.handle_parse_error(LexError(f"not UTF-8 text: {e.reason}"), piece_id)
                results.append((piece_id, ValidationReport((ValidationIssue(Severity.ERROR, info.issue_code,
                                                                            str(e)),))))
                continue
            results.append((piece_id, self.load_score(text, piece_id)[1]))
        return results

    # plans

    def extract_plans(self, path: Path, out_dir: Optional[Path] = None, sparse: bool = False,
                      seed: Optional[int] = None) -> ExtractionResult:
        """
        Extract a dense or sparse plan from every valid score.

        Invalid scores are skipped with a warning. With out_dir set, each plan is
        written there as <stem>.json.
        """
        seed = self.settings.seed if seed is None else seed
        root, files = collect_score_files(path)
        result = ExtractionResult()
        for file in files:
            piece_id = file.relative_to(root).as_posix()
            score, validity = self.load_score(file.read_bytes().decode("utf-8", errors="replace"), piece_id)
            if score is None or not validity.is_valid:
                logger.warning(f"Skipping invalid score {piece_id}: "
                               f"{', '.join(i.code for i in validity.errors)}")
                result.skipped.append(piece_id)
                continue
            plan = extract_plan(score, self.table, self.settings)
            if sparse:
                selection = select_pivots(plan, seed, self.settings)
                result.selections[piece_id] = selection
                plan = plan.sparse(selection.indices)
            result.plans[piece_id] = plan
            if out_dir is not None:
                target = Path(out_dir) / f"{file.stem}.json"
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(write_plan(plan))
                result.written.append(target)
        if result.skipped:
            logger.warning(f"Skipped {len(result.skipped)} invalid file(s)")
        return result


_WORKER: Optional[EvaluationManager] = None


def _init_worker(settings: ScoreLintSettings, table: InstrumentTable, fingerprint: str):
    global _WORKER
    _WORKER = EvaluationManager(settings, table, fingerprint)


def _evaluate_job(task: Tuple[str, Optional[str], str]) -> MetricReport:
    return _WORKER._evaluate_task(task)


# Convenience functions for easy integration
def evaluate_file(path: Path, plan_path: Optional[Path] = None,
                  config_path: Optional[str] = None) -> MetricReport:
    return EvaluationManager.from_config(config_path).evaluate_file(path, plan_path)


def evaluate_corpus(path: Path, plan_dir: Optional[Path] = None, jobs: int = 1,
                    config_path: Optional[str] = None) -> CorpusEvaluation:
    return EvaluationManager.from_config(config_path, {"jobs": jobs}).evaluate_corpus(path, plan_dir)


def extract_plans_cmd(path: Path, out_dir: Optional[Path] = None, sparse: bool = False,
                      seed: int = 0, config_path: Optional[str] = None) -> ExtractionResult:
    return EvaluationManager.from_config(config_path).extract_plans(path, out_dir, sparse, seed)
