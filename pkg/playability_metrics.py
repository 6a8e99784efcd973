"""
Playability Metrics for scorelint
Violation-based checks of each part against its instrument's constraints:
pitch range, chord span, monophony and rhythmic overlap.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Tuple

from constraints_manager import InstrumentTable
from error_handler import NoApplicableMetricsError
from score_model import InstrumentConstraints, NoteEvent, Part, Score, absolute_notes

logger = logging.getLogger(__name__)

Pct = Optional[Fraction]  # None marks a not-applicable constituent


def percentage(good: int, total: int) -> Pct:
    if total == 0:
        return None
    return Fraction(100 * good, total)


def part_offsets(part: Part) -> List[Fraction]:
    """Measure starts of a part on its own: content length, else capacity."""
    offsets, position = [], Fraction(0)
    for measure in part.measures:
        offsets.append(position)
        position += measure.content_duration or measure.capacity
    return offsets


def macro_average(values: Iterable[Pct]) -> Fraction:
    """Unweighted mean of the applicable values."""
    applicable = [v for v in values if v is not None]
    if not applicable:
        raise NoApplicableMetricsError("No applicable constituent scores")
    return sum(applicable, Fraction(0)) / len(applicable)


@dataclass(frozen=True)
class InstrumentPlayability:
    part_id: str
    instrument: str
    used_default: bool
    pitch_range_pct: Pct
    pitch_span_pct: Pct
    monophonic_pct: Pct
    overlap_pct: Pct

    def constituents(self) -> Dict[str, Pct]:
        return {
            "pitch_range_pct": self.pitch_range_pct,
            "pitch_span_pct": self.pitch_span_pct,
            "monophonic_pct": self.monophonic_pct,
            "overlap_pct": self.overlap_pct,
        }


@dataclass(frozen=True)
class PlayabilityResult:
    per_instrument: Tuple[InstrumentPlayability, ...]
    total_playability_pct: Fraction


def pitch_range_score(part: Part, constraints: InstrumentConstraints) -> Pct:
    """Share of pitches inside the instrument's MIDI range; chords count per pitch."""
    low, high = constraints.midi_range
    midis = [p.midi for m in part.measures for note in m.notes for p in note.pitches]
    return percentage(sum(low <= midi <= high for midi in midis), len(midis))


def pitch_span_score(part: Part, constraints: InstrumentConstraints) -> Pct:
    """Share of chords whose outer interval fits one player's reach."""
    if constraints.monophonic:
        return None
    chords = [note for m in part.measures for note in m.notes if note.is_chord]
    if not chords:
        return None
    if constraints.max_span_semitones is None:
        return Fraction(100)
    fitting = sum(max(c.midis) - min(c.midis) <= constraints.max_span_semitones for c in chords)
    return percentage(fitting, len(chords))


def monophonic_score(part: Part, constraints: InstrumentConstraints,
                     offsets: Optional[List[Fraction]] = None) -> Pct:
    """Share of onset instants at which exactly one pitch sounds."""
    if not constraints.monophonic:
        return None
    placed = absolute_notes(part, offsets if offsets is not None else part_offsets(part))
    spans = [(onset, onset + note.duration, len(note.pitches)) for onset, note in placed]
    instants = sorted({onset for onset, _, _ in spans})
    single = 0
    for t in instants:
        sounding = sum(count for start, end, count in spans if start <= t < end)
        single += sounding == 1
    return percentage(single, len(instants))


def merge_ties(placed: List[Tuple[Fraction, NoteEvent]]) -> List[Tuple[Fraction, Fraction]]:
    """(onset, offset) spans with tied continuations folded into the note they continue."""
    merged: List[List] = []  # [onset, offset, midis, tie_forward]
    for onset, note in placed:
        target = None
        if note.tie_backward:
            for item in reversed(merged):
                if item[3] and item[1] == onset and item[2] & set(note.midis):
                    target = item
                    break
        if target is not None:
            target[1] = onset + note.duration
            target[2] = set(note.midis)
            target[3] = note.tie_forward
        else:
            merged.append([onset, onset + note.duration, set(note.midis), note.tie_forward])
    return [(item[0], item[1]) for item in merged]


def rhythmic_overlap_score(part: Part, constraints: InstrumentConstraints,
                           offsets: Optional[List[Fraction]] = None) -> Pct:
    """
    Share of consecutive note pairs where the next onset is not before the previous offset.

    None for fewer than two notes after tie merging.
    """
    if not constraints.monophonic:
        return None
    placed = absolute_notes(part, offsets if offsets is not None else part_offsets(part))
    spans = merge_ties(placed)
    if len(spans) < 2:
        return None
    violations = sum(current[0] < previous[1] for previous, current in zip(spans, spans[1:]))
    return 100 * (1 - Fraction(violations, len(spans) - 1))


def total_playability(results: Iterable[InstrumentPlayability]) -> Fraction:
    """
    Macro-average over every applicable (instrument, constituent) score.

    Raises:
        NoApplicableMetricsError: If nothing is applicable
    """
    return macro_average(v for r in results for v in r.constituents().values())


def evaluate_playability(score: Score, table: InstrumentTable) -> PlayabilityResult:
    """Score every part of a piece against the constraints table."""
    offsets = score.measure_offsets()
    records = []
    for part in score.parts:
        binding = table.bind_part(part)
        constraints = binding.constraints
        records.append(InstrumentPlayability(
            part_id=part.part_id,
            instrument=part.label if binding.used_default else constraints.canonical_name,
            used_default=binding.used_default,
            pitch_range_pct=pitch_range_score(part, constraints),
            pitch_span_pct=pitch_span_score(part, constraints),
            monophonic_pct=monophonic_score(part, constraints, offsets),
            overlap_pct=rhythmic_overlap_score(part, constraints, offsets),
        ))
    total = total_playability(records)
    logger.debug(f"Total playability {float(total):.2f}% over {len(records)} parts")
    return PlayabilityResult(tuple(records), total)
