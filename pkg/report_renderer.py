"""
Report Renderer for scorelint
Canonical JSON and CSV views of metric reports, corpus summaries, validity
listings and plans.
"""

import csv
import io
import json
from decimal import Decimal
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

from abc_parser import ValidationReport
from adherence_metrics import AdherenceResult, UtilizationResult
from evaluation_manager import (
    METRIC_ORDER, REPORT_SCHEMA_VERSION, TOOL_VERSION, CorpusEvaluation, CorpusSummary, MetricReport,
)
from playability_metrics import PlayabilityResult
from readability_metrics import ReadabilityResult
from structure_analyzer import StructureResult

CSV_FIELDS = ("schema_version", "metric", "mean", "min", "median", "max", "count")


def hundredths(value: Fraction) -> int:
    """Value in hundredths, rounded half to even."""
    return round(Fraction(value) * 100)


def number(value: Optional[Fraction]) -> Optional[float]:
    """Two-decimal JSON number; None stays null."""
    if value is None:
        return None
    return hundredths(value) / 100


def decimal_text(value: Optional[Fraction]) -> str:
    """Fixed two-decimal text for CSV cells; empty when not applicable."""
    if value is None:
        return ""
    return str(Decimal(hundredths(value)).scaleb(-2))


def canonical_json(document: Any) -> str:
    return json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def validity_to_dict(validity: ValidationReport) -> Dict[str, Any]:
    return {
        "is_valid": validity.is_valid,
        "n_errors": len(validity.errors),
        "n_warnings": len(validity.warnings),
        "issues": [issue.to_dict() for issue in validity.issues],
    }


def _playability(result: Optional[PlayabilityResult]) -> Optional[Dict[str, Any]]:
    if result is None:
        return None
    return {
        "total_playability": number(result.total_playability_pct),
        "per_instrument": [
            {
                "part_id": r.part_id,
                "instrument": r.instrument,
                "used_default": r.used_default,
                "pitch_range": number(r.pitch_range_pct),
                "pitch_span": number(r.pitch_span_pct),
                "monophonic": number(r.monophonic_pct),
                "rhythmic_overlap": number(r.overlap_pct),
            }
            for r in result.per_instrument
        ],
    }


def _readability(result: Optional[ReadabilityResult]) -> Optional[Dict[str, Any]]:
    if result is None:
        return None
    return {
        "total_readability": number(result.total_readability_pct),
        "per_instrument": [
            {
                "part_id": r.part_id,
                "instrument": r.instrument,
                "rhythmic_jitter": number(r.jitter_pct),
                "tie_complexity": number(r.tie_complexity_pct),
                "accidental_consistency": number(r.accidental_consistency_pct),
                "enharmonic_directionality": number(r.enharmonic_pct),
            }
            for r in result.per_instrument
        ],
    }


def _utilization(result: Optional[UtilizationResult]) -> Optional[Dict[str, Any]]:
    if result is None:
        return None
    return {
        "coverage": number(result.mean_coverage_pct),
        "active_density": number(result.mean_density_pct),
        "per_instrument": [
            {
                "part_id": r.part_id,
                "instrument": r.instrument,
                "first_measure": r.m_first,
                "last_measure": r.m_last,
                "active_measures": r.active_measure_count,
                "coverage": number(r.coverage_pct),
                "active_density": number(r.density_pct),
            }
            for r in result.per_instrument
        ],
    }


def _adherence(result: Optional[AdherenceResult]) -> Optional[Dict[str, Any]]:
    if result is None:
        return None
    tempo = result.tempo
    return {
        "plan_measure": result.plan_measure,
        "tempo": {
            "matched": tempo.matched,
            "near_miss": tempo.near_miss,
            "plan_qpm": number(tempo.plan_qpm),
            "score_qpm": number(tempo.score_qpm),
            "relative_error": number(tempo.relative_error),
        },
        "key": {"match": result.key.kind.value, "plan": result.key.plan_key, "score": result.key.score_key},
        "time_match": result.time_match,
        "instruments": {
            "match": number(result.instruments.match_pct),
            "plan": list(result.instruments.plan_set),
            "score": list(result.instruments.score_set),
        },
    }


def _structure(result: Optional[StructureResult]) -> Optional[Dict[str, Any]]:
    if result is None:
        return None
    return {
        "structure_score": number(result.structure_score),
        "n_points": result.n_points,
        "n_tecs": len(result.cover),
        "decimated": result.decimated,
        "n_windows": result.n_windows,
        "mode": result.mode,
    }


def report_to_dict(report: MetricReport) -> Dict[str, Any]:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": report.tool_version,
        "config_fingerprint": report.config_fingerprint,
        "piece_id": report.piece_id,
        "validity": validity_to_dict(report.validity),
        "playability": _playability(report.playability),
        "readability": _readability(report.readability),
        "utilization": _utilization(report.utilization),
        "adherence": _adherence(report.adherence),
        "structure": _structure(report.structure),
        "external_similarity": number(report.external_similarity),
        "warnings": list(report.warnings),
    }


def summary_rows(summary: CorpusSummary) -> List[Dict[str, Any]]:
    """One row per metric, in summary order."""
    rows = []
    for name in METRIC_ORDER:
        dist = summary.distributions[name]
        rows.append({
            "metric": name,
            "mean": summary.means[name],
            "min": dist.minimum if dist else None,
            "median": dist.median if dist else None,
            "max": dist.maximum if dist else None,
            "count": dist.count if dist else 0,
        })
    return rows


def summary_to_dict(summary: CorpusSummary) -> Dict[str, Any]:
    return {
        "n_files": summary.n_files,
        "n_valid": summary.n_valid,
        "valid_pct": number(summary.valid_pct),
        "comparable": summary.comparable,
        "config_fingerprints": list(summary.config_fingerprints),
        "error_stats": dict(summary.error_stats),
        "metrics": [
            {key: (number(v) if key in ("mean", "min", "median", "max") else v) for key, v in row.items()}
            for row in summary_rows(summary)
        ],
    }


def render_report_json(report: MetricReport) -> str:
    return canonical_json(report_to_dict(report))


def render_corpus_json(evaluation: CorpusEvaluation) -> str:
    return canonical_json({
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "summary": summary_to_dict(evaluation.summary),
        "reports": [report_to_dict(r) for r in evaluation.reports],
    })


def render_summary_csv(summary: CorpusSummary) -> str:
    """Spreadsheet view of the summary; the first row is the valid-file share."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerow({"schema_version": REPORT_SCHEMA_VERSION, "metric": "valid_files",
                     "mean": decimal_text(summary.valid_pct), "min": "", "median": "", "max": "",
                     "count": summary.n_files})
    for row in summary_rows(summary):
        writer.writerow({
            "schema_version": REPORT_SCHEMA_VERSION,
            "metric": row["metric"],
            "mean": decimal_text(row["mean"]),
            "min": decimal_text(row["min"]),
            "median": decimal_text(row["median"]),
            "max": decimal_text(row["max"]),
            "count": row["count"],
        })
    return buffer.getvalue()


def render_validity_json(results: Sequence[Tuple[str, ValidationReport]]) -> str:
    return canonical_json({
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "files": [dict(piece_id=piece_id, **validity_to_dict(validity)) for piece_id, validity in results],
    })
