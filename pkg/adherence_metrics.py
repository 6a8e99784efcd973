"""
Adherence Metrics for scorelint
Instrument utilization (coverage, active density) and plan-versus-score
matching of tempo, key, time signature and instrumentation.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, List, Optional, Protocol, Tuple

from constraints_manager import InstrumentTable, normalize_instrument_name
from error_handler import ConfigError, error_handler
from playability_metrics import Pct
from plan_extractor import PlanDocument
from score_model import KeySignature, Part, Score, TimeSignature

logger = logging.getLogger(__name__)


# utilization

@dataclass(frozen=True)
class InstrumentUtilization:
    part_id: str
    instrument: str
    m_first: Optional[int]
    m_last: Optional[int]
    coverage_pct: Fraction
    active_measure_count: int
    density_pct: Fraction


@dataclass(frozen=True)
class UtilizationResult:
    per_instrument: Tuple[InstrumentUtilization, ...]
    mean_coverage_pct: Fraction
    mean_density_pct: Fraction


def coverage_ratio(part: Part, m_total: int) -> Fraction:
    """Span from first to last note-bearing measure over all measures; 0 for silent parts."""
    active = part.note_bearing_measures()
    if not active or m_total == 0:
        return Fraction(0)
    return Fraction(100 * (active[-1] - active[0] + 1), m_total)


def active_density(part: Part, m_total: int) -> Fraction:
    """Note-bearing measures over all measures."""
    if m_total == 0:
        return Fraction(0)
    return Fraction(100 * len(part.note_bearing_measures()), m_total)


def evaluate_utilization(score: Score, table: InstrumentTable) -> UtilizationResult:
    m_total = score.measure_count
    records = []
    for part in score.parts:
        active = part.note_bearing_measures()
        records.append(InstrumentUtilization(
            part_id=part.part_id,
            instrument=table.instrument_name(part),
            m_first=active[0] if active else None,
            m_last=active[-1] if active else None,
            coverage_pct=coverage_ratio(part, m_total),
            active_measure_count=len(active),
            density_pct=active_density(part, m_total),
        ))
    count = len(records) or 1
    return UtilizationResult(
        tuple(records),
        sum((r.coverage_pct for r in records), Fraction(0)) / count,
        sum((r.density_pct for r in records), Fraction(0)) / count,
    )


# tempo, key and time

@dataclass(frozen=True)
class TempoMatch:
    matched: bool
    plan_qpm: Fraction
    score_qpm: Optional[Fraction]
    relative_error: Optional[Fraction]
    near_miss: bool = False


def _within(candidate: Fraction, target: Fraction, tolerance: Fraction) -> bool:
    return abs(candidate - target) / target <= tolerance


def tempo_match(plan_tempo: Fraction, score: Score, tolerance: Fraction = Fraction(2, 100)) -> TempoMatch:
    """
    Compare the plan tempo with the score's first tempo, both in quarter notes per minute.

    near_miss is set when reading the score's beat unit as twice or half as
    long would have matched (eighth-note tempo written as a quarter-note tempo).
    """
    score_qpm = score.first_tempo()
    if score_qpm is None:
        error_handler.handle_metric_warning("Score declares no tempo", "tempo match scored as no match")
        return TempoMatch(False, plan_tempo, None, None, False)
    error = abs(score_qpm - plan_tempo) / plan_tempo
    matched = error <= tolerance
    near_miss = not matched and (_within(score_qpm * 2, plan_tempo, tolerance)
                                 or _within(score_qpm / 2, plan_tempo, tolerance))
    return TempoMatch(matched, plan_tempo, score_qpm, error, near_miss)


class KeyMatchKind(Enum):
    EXACT = "exact"
    RELATIVE = "relative"
    NONE = "none"


@dataclass(frozen=True)
class KeyMatch:
    kind: KeyMatchKind
    plan_key: str
    score_key: str

    @property
    def exact(self) -> bool:
        return self.kind is KeyMatchKind.EXACT

    @property
    def relative(self) -> bool:
        return self.kind is not KeyMatchKind.NONE

    @property
    def matched(self) -> bool:
        return self.relative


def key_match(plan_key: KeySignature, score_key: KeySignature) -> KeyMatch:
    """Exact on tonic and mode; relative major/minor pairs share a signature."""
    same_tonic = (plan_key.tonic_step, plan_key.tonic_alter) == (score_key.tonic_step, score_key.tonic_alter)
    if same_tonic and plan_key.mode is score_key.mode:
        kind = KeyMatchKind.EXACT
    elif plan_key.fifths == score_key.fifths:
        kind = KeyMatchKind.RELATIVE
    else:
        kind = KeyMatchKind.NONE
    return KeyMatch(kind, str(plan_key), str(score_key))


def time_match(plan_ts: TimeSignature, score_ts: TimeSignature) -> bool:
    """Literal comparison; 6/8 and 3/4 differ."""
    return (plan_ts.numerator, plan_ts.denominator) == (score_ts.numerator, score_ts.denominator)


# instrumentation

class InstrumentJudge(Protocol):
    """Decides whether two instrument names denote the same instrument."""

    def same_instrument(self, first: str, second: str) -> bool:
        ...


class AliasJudge:
    """Deterministic judge backed by the alias table."""

    def __init__(self, table: InstrumentTable):
        self.table = table

    def same_instrument(self, first: str, second: str) -> bool:
        a, b = self.table.resolve(first), self.table.resolve(second)
        if a.resolved or b.resolved:
            return a.canonical == b.canonical
        return a.normalized == b.normalized


@dataclass(frozen=True)
class JudgeRequest:
    first: str
    second: str

    def to_dict(self) -> Dict[str, str]:
        return {"first": self.first, "second": self.second}


@dataclass(frozen=True)
class JudgeVerdict:
    same: bool
    rationale: str = ""

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "JudgeVerdict":
        return cls(bool(data["same"]), str(data.get("rationale", "")))


class ExternalJudgeClient:
    """
    Request/response contract for an external instrument-name judge.

    The transport is any callable taking the request record and returning the
    verdict record; none ships with scorelint.
    """

    def __init__(self, transport: Optional[Callable[[Dict[str, str]], Dict[str, Any]]] = None):
        self.transport = transport

    def same_instrument(self, first: str, second: str) -> bool:
        if self.transport is None:
            raise ConfigError("No transport configured for the external instrument judge")
        verdict = JudgeVerdict.from_dict(self.transport(JudgeRequest(first, second).to_dict()))
        logger.debug(f"Judge: {first!r} vs {second!r} -> {verdict.same} ({verdict.rationale})")
        return verdict.same


@dataclass(frozen=True)
class InstrumentMatch:
    match_pct: Fraction
    plan_set: Tuple[str, ...]
    score_set: Tuple[str, ...]
    trace: Tuple[Dict[str, Any], ...] = field(default=(), compare=False)


def instrument_match(plan_names: Iterable[str], score_names: Iterable[str], table: InstrumentTable,
                     judge: Optional[InstrumentJudge] = None) -> InstrumentMatch:
    """
    Jaccard overlap of canonical instrument sets, as a percentage.

    Names with no alias entry pass through verbatim; a judge, when given, may
    pair leftover unresolved names across the two sides.
    """
    trace: List[Dict[str, Any]] = []

    def canonical_set(names: Iterable[str], side: str) -> set:
        result = set()
        for name in sorted(set(names)):
            resolution = table.resolve(name)
            result.add(resolution.canonical or name)
            trace.append({"side": side, "name": name, "normalized": resolution.normalized,
                          "canonical": resolution.canonical})
        return result

    plan_set = canonical_set(plan_names, "plan")
    score_set = canonical_set(score_names, "score")

    if judge is not None:
        for name in sorted(plan_set - score_set):
            if table.resolve(name).resolved:
                continue
            for other in sorted(score_set - plan_set):
                if not table.resolve(other).resolved and judge.same_instrument(name, other):
                    score_set = (score_set - {other}) | {name}
                    trace.append({"side": "judge", "name": other, "normalized": normalize_instrument_name(other),
                                  "canonical": name})
                    break

    union = plan_set | score_set
    pct = Fraction(100) if not union else Fraction(100 * len(plan_set & score_set), len(union))
    return InstrumentMatch(pct, tuple(sorted(plan_set)), tuple(sorted(score_set)), tuple(trace))


@dataclass(frozen=True)
class AdherenceResult:
    tempo: TempoMatch
    key: KeyMatch
    time_match: bool
    instruments: InstrumentMatch
    plan_measure: int = 0


def evaluate_adherence(plan: PlanDocument, score: Score, table: InstrumentTable,
                       tolerance: Fraction = Fraction(2, 100),
                       judge: Optional[InstrumentJudge] = None) -> AdherenceResult:
    """
    Compare the plan's opening entry against the score.

    The entry for measure 0 is used; a sparse plan without one falls back to
    its earliest entry, compared with the score measure of the same index.
    """
    if not plan.measures:
        raise ValueError("Plan has no measure entries to compare")
    requested = plan.measures[0]
    if requested.index != 0:
        logger.warning(f"Plan has no entry for measure 0; scoring its measure {requested.index}")
    lead = next(p for p in score.parts if p.measures)
    opening = lead.measures[requested.index if requested.index < len(lead.measures) else 0]
    played = [table.instrument_name(part) for part in score.parts if part.note_count]
    for later in plan.measures[1:]:
        if later.time_signature != requested.time_signature or later.key_signature != requested.key_signature:
            logger.info(f"Plan changes signature at measure {later.index}; only the opening is scored")
            break
    return AdherenceResult(
        tempo=tempo_match(requested.tempo_qpm, score, tolerance),
        key=key_match(requested.key_signature, opening.key_signature),
        time_match=time_match(requested.time_signature, opening.time_signature),
        instruments=instrument_match(plan.instrumentation, played, table, judge),
        plan_measure=requested.index,
    )
