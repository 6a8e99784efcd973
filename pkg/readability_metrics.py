"""
Readability Metrics for scorelint
Engraving-clarity checks per part: rhythmic jitter, tie complexity,
accidental consistency and enharmonic directionality.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Tuple

from constraints_manager import InstrumentTable
from playability_metrics import Pct, macro_average, percentage
from score_model import (
    KeyDirection, NoteEvent, Part, Score, diatonic_pitch_classes, key_direction,
)

logger = logging.getLogger(__name__)

# 64th-note grid and the "64th or shorter" threshold, in quarter notes.
GRID_STEP = Fraction(1, 16)
SHORT_NOTE_LIMIT = Fraction(1, 16)


@dataclass(frozen=True)
class InstrumentReadability:
    part_id: str
    instrument: str
    jitter_pct: Pct
    tie_complexity_pct: Pct
    accidental_consistency_pct: Pct
    enharmonic_pct: Pct

    def constituents(self) -> Dict[str, Pct]:
        return {
            "jitter_pct": self.jitter_pct,
            "tie_complexity_pct": self.tie_complexity_pct,
            "accidental_consistency_pct": self.accidental_consistency_pct,
            "enharmonic_pct": self.enharmonic_pct,
        }


@dataclass(frozen=True)
class ReadabilityResult:
    per_instrument: Tuple[InstrumentReadability, ...]
    total_readability_pct: Fraction


def _on_grid(value: Fraction, step: Fraction) -> bool:
    return (value / step).denominator == 1


def is_jittery(note: NoteEvent, strict: bool = False) -> bool:
    """64th-or-shorter, or off the measure-relative 64th grid."""
    if note.duration <= SHORT_NOTE_LIMIT:
        return True
    tuplet = note.tuplet
    if tuplet is None or strict:
        return not _on_grid(note.onset, GRID_STEP)
    return not (_on_grid(tuplet.start, GRID_STEP)
                and _on_grid(note.onset - tuplet.start, GRID_STEP * tuplet.ratio))


def rhythmic_jitter_score(part: Part, strict: bool = False) -> Pct:
    """
    Share of note events free of quantization noise.

    Args:
        part: Part to check
        strict: Disable the tuplet exemption and test every onset on the plain grid
    """
    notes = [note for m in part.measures for note in m.notes]
    return percentage(sum(not is_jittery(n, strict) for n in notes), len(notes))


def tie_complexity_score(part: Part) -> Pct:
    notes = [note for m in part.measures for note in m.notes]
    if not notes:
        return None
    tied = sum(n.tie_forward or n.tie_backward for n in notes)
    return max(Fraction(0), 100 * (1 - Fraction(tied, len(notes))))


def accidental_consistency_score(part: Part) -> Pct:
    """Share of pitches diatonic to the key in force at their onset (natural minor for minor keys)."""
    diatonic = total = 0
    for measure in part.measures:
        for note in measure.notes:
            scale = diatonic_pitch_classes(measure.key_at(note.onset))
            for pitch in note.pitches:
                total += 1
                diatonic += pitch.pitch_class in scale
    return percentage(diatonic, total)


def enharmonic_directionality_score(part: Part) -> Pct:
    """
    Share of written accidentals whose direction agrees with the key.

    Flats in sharp keys and sharps in flat keys are violations; naturals and
    keys without accidentals never violate. 100 when no accidental is written.
    """
    if part.note_count == 0:
        return None
    written = violations = 0
    for measure in part.measures:
        for note in measure.notes:
            direction = key_direction(measure.key_at(note.onset))
            for pitch, explicit in zip(note.pitches, note.explicit_accidentals):
                if not explicit:
                    continue
                written += 1
                if direction is KeyDirection.SHARP and pitch.alter < 0:
                    violations += 1
                elif direction is KeyDirection.FLAT and pitch.alter > 0:
                    violations += 1
    if written == 0:
        return Fraction(100)
    return 100 * (1 - Fraction(violations, written))


def total_readability(results: Iterable[InstrumentReadability]) -> Fraction:
    """Computed like total playability, over the four readability constituents."""
    return macro_average(v for r in results for v in r.constituents().values())


def evaluate_readability(score: Score, table: InstrumentTable, strict: bool = False) -> ReadabilityResult:
    records = []
    for part in score.parts:
        records.append(InstrumentReadability(
            part_id=part.part_id,
            instrument=table.instrument_name(part),
            jitter_pct=rhythmic_jitter_score(part, strict),
            tie_complexity_pct=tie_complexity_score(part),
            accidental_consistency_pct=accidental_consistency_score(part),
            enharmonic_pct=enharmonic_directionality_score(part),
        ))
    if strict:
        logger.info("Jitter computed in strict mode (no tuplet exemption)")
    return ReadabilityResult(tuple(records), total_readability(records))
