"""
Score Model for scorelint
Immutable multi-part score representation with exact rational timing,
plus the pitch and key theory shared by every metric.
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import FrozenSet, List, Optional, Tuple


STEP_PITCH_CLASS = {'C': 0, 'D': 2, 'E': 4, 'F': 5, 'G': 7, 'A': 9, 'B': 11}

# Circle-of-fifths orders, shared by key signatures and the parser.
SHARPS_ORDER = 'FCGDAEB'
FLATS_ORDER = 'BEADGCF'

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
NATURAL_MINOR_SCALE = (0, 2, 3, 5, 7, 8, 10)

ACCIDENTAL_TEXT = {-2: 'bb', -1: 'b', 0: '', 1: '#', 2: '##'}

# Preferred spellings of the twelve pitch classes.
SHARP_SPELLINGS = [('C', 0), ('C', 1), ('D', 0), ('D', 1), ('E', 0), ('F', 0),
                   ('F', 1), ('G', 0), ('G', 1), ('A', 0), ('A', 1), ('B', 0)]
FLAT_SPELLINGS = [('C', 0), ('D', -1), ('D', 0), ('E', -1), ('E', 0), ('F', 0),
                  ('G', -1), ('G', 0), ('A', -1), ('A', 0), ('B', -1), ('B', 0)]


class Mode(Enum):
    """Key mode. Church modes are folded onto major by the parser."""
    MAJOR = "major"
    MINOR = "minor"


class KeyDirection(Enum):
    """Accidental direction implied by a key signature."""
    SHARP = "sharp"
    FLAT = "flat"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class SpelledPitch:
    """A pitch with its letter spelling preserved."""
    step: str
    alter: int
    octave: int

    def __post_init__(self):
        if self.step not in STEP_PITCH_CLASS:
            raise ValueError(f"Invalid step: {self.step!r}")
        if abs(self.alter) > 2:
            raise ValueError(f"Alteration out of range: {self.alter}")

    @property
    def midi(self) -> int:
        return 12 * (self.octave + 1) + STEP_PITCH_CLASS[self.step] + self.alter

    @property
    def pitch_class(self) -> int:
        return self.midi % 12

    @property
    def name(self) -> str:
        return f"{self.step}{ACCIDENTAL_TEXT[self.alter]}{self.octave}"

    @classmethod
    def from_midi(cls, midi: int, prefer_flats: bool = False) -> "SpelledPitch":
        """Spell a MIDI number with the plain sharp or flat spelling."""
        spellings = FLAT_SPELLINGS if prefer_flats else SHARP_SPELLINGS
        step, alter = spellings[midi % 12]
        octave = (midi - STEP_PITCH_CLASS[step] - alter) // 12 - 1
        return cls(step, alter, octave)


@dataclass(frozen=True)
class TupletInfo:
    """Notated tuplet: p notes in the time of q, starting at `start`."""
    p: int
    q: int
    start: Fraction

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.q, self.p)


@dataclass(frozen=True)
class NoteEvent:
    """A note or chord. Onsets and durations are quarter notes from measure start."""
    onset: Fraction
    duration: Fraction
    pitches: Tuple[SpelledPitch, ...]
    tie_forward: bool = False
    tie_backward: bool = False
    explicit_accidentals: Tuple[bool, ...] = ()
    dynamic: Optional[str] = None
    tuplet: Optional[TupletInfo] = None
    layer: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"Duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise ValueError(f"Onset must be non-negative, got {self.onset}")
        if not self.pitches:
            raise ValueError("A note event needs at least one pitch")
        if not self.explicit_accidentals:
            object.__setattr__(self, 'explicit_accidentals', (False,) * len(self.pitches))
        elif len(self.explicit_accidentals) != len(self.pitches):
            raise ValueError("One explicit-accidental flag per pitch is required")

    @property
    def offset(self) -> Fraction:
        return self.onset + self.duration

    @property
    def is_chord(self) -> bool:
        return len(self.pitches) > 1

    @property
    def midis(self) -> Tuple[int, ...]:
        return tuple(p.midi for p in self.pitches)


@dataclass(frozen=True)
class RestEvent:
    """A notated rest; kept so measure content length is exact."""
    onset: Fraction
    duration: Fraction
    layer: int = 0

    @property
    def offset(self) -> Fraction:
        return self.onset + self.duration


@dataclass(frozen=True)
class TimeSignature:
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.numerator <= 0:
            raise ValueError(f"Numerator must be positive: {self.numerator}")
        if self.denominator <= 0 or self.denominator & (self.denominator - 1):
            raise ValueError(f"Denominator must be a power of two: {self.denominator}")

    @property
    def capacity(self) -> Fraction:
        """Measure length in quarter notes."""
        return Fraction(4 * self.numerator, self.denominator)

    @classmethod
    def parse(cls, text: str) -> "TimeSignature":
        text = text.strip()
        if text == 'C':
            return cls(4, 4)
        if text == 'C|':
            return cls(2, 2)
        numerator, _, denominator = text.partition('/')
        return cls(int(numerator), int(denominator))

    def __str__(self) -> str:
        return f"{self.numerator}/{self.denominator}"


def major_fifths(step: str, alter: int) -> int:
    """Circle-of-fifths position of the major key on this tonic."""
    return SHARPS_ORDER.index(step) - 1 + 7 * alter


@dataclass(frozen=True)
class KeySignature:
    tonic_step: str
    tonic_alter: int
    mode: Mode
    fifths: int

    def __post_init__(self):
        if not -7 <= self.fifths <= 7:
            raise ValueError(f"Key signature out of range: {self.fifths} fifths")
        expected = major_fifths(self.tonic_step, self.tonic_alter)
        if self.mode is Mode.MINOR:
            expected -= 3
        if expected != self.fifths:
            raise ValueError(f"{self.tonic} {self.mode.value} does not have {self.fifths} fifths")

    @classmethod
    def from_tonic(cls, tonic: str, mode: Mode = Mode.MAJOR) -> "KeySignature":
        """Build from a tonic name such as 'F#' or 'Bb'."""
        step = tonic[0].upper()
        alter = {'': 0, '#': 1, 'b': -1}[tonic[1:]]
        fifths = major_fifths(step, alter) - (3 if mode is Mode.MINOR else 0)
        return cls(step, alter, mode, fifths)

    @classmethod
    def from_fifths(cls, fifths: int, mode: Mode = Mode.MAJOR) -> "KeySignature":
        position = fifths + 3 if mode is Mode.MINOR else fifths
        step = SHARPS_ORDER[(position + 1) % 7]
        alter = (position + 1) // 7
        return cls(step, alter, mode, fifths)

    @property
    def tonic(self) -> str:
        return f"{self.tonic_step}{ACCIDENTAL_TEXT[self.tonic_alter]}"

    @property
    def tonic_pitch_class(self) -> int:
        return (STEP_PITCH_CLASS[self.tonic_step] + self.tonic_alter) % 12

    def relative(self) -> "KeySignature":
        other = Mode.MINOR if self.mode is Mode.MAJOR else Mode.MAJOR
        return KeySignature.from_fifths(self.fifths, other)

    def alter_for(self, step: str) -> int:
        """Alteration the signature applies to a letter."""
        if self.fifths > 0 and step in SHARPS_ORDER[:self.fifths]:
            return 1
        if self.fifths < 0 and step in FLATS_ORDER[:-self.fifths]:
            return -1
        return 0

    def __str__(self) -> str:
        return f"{self.tonic} {self.mode.value}"


@dataclass(frozen=True)
class Measure:
    index: int
    time_signature: TimeSignature
    key_signature: KeySignature
    tempo_qpm: Optional[Fraction] = None
    notes: Tuple[NoteEvent, ...] = ()
    rests: Tuple[RestEvent, ...] = ()
    # (onset, key) for inline key changes after the first event
    key_changes: Tuple[Tuple[Fraction, KeySignature], ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.notes, key=lambda n: (n.onset, n.layer)))
        object.__setattr__(self, 'notes', ordered)

    def key_at(self, onset: Fraction) -> KeySignature:
        """Key in force at an onset."""
        key = self.key_signature
        for at, changed in self.key_changes:
            if at <= onset:
                key = changed
        return key

    @property
    def closing_key(self) -> KeySignature:
        return self.key_changes[-1][1] if self.key_changes else self.key_signature

    @property
    def rests_only(self) -> bool:
        return not self.notes

    @property
    def capacity(self) -> Fraction:
        return self.time_signature.capacity

    @property
    def content_duration(self) -> Fraction:
        """Furthest offset reached by any note or rest."""
        offsets = [n.offset for n in self.notes] + [r.offset for r in self.rests]
        return max(offsets, default=Fraction(0))


@dataclass(frozen=True)
class Part:
    part_id: str
    declared_name: Optional[str] = None
    midi_program: Optional[int] = None
    measures: Tuple[Measure, ...] = ()
    declared: bool = True

    @property
    def label(self) -> str:
        return self.declared_name or self.part_id

    @property
    def note_count(self) -> int:
        return sum(len(m.notes) for m in self.measures)

    def note_bearing_measures(self) -> List[int]:
        return [m.index for m in self.measures if m.notes]


@dataclass(frozen=True)
class ParseNotice:
    """Non-fatal condition met while parsing."""
    code: str
    message: str
    line: Optional[int] = None


@dataclass(frozen=True)
class Score:
    parts: Tuple[Part, ...]
    title: Optional[str] = None
    genre: Optional[str] = None
    composer: Optional[str] = None
    notices: Tuple[ParseNotice, ...] = field(default=(), compare=False)

    @property
    def measure_count(self) -> int:
        return max((len(p.measures) for p in self.parts), default=0)

    def measure_lengths(self) -> List[Fraction]:
        """Sounding length of each measure: longest part content, else capacity."""
        lengths = []
        for i in range(self.measure_count):
            present = [p.measures[i] for p in self.parts if i < len(p.measures)]
            content = max((m.content_duration for m in present), default=Fraction(0))
            lengths.append(content if content > 0 else present[0].capacity)
        return lengths

    def measure_offsets(self) -> List[Fraction]:
        """Absolute start of each measure in quarter notes."""
        offsets, position = [], Fraction(0)
        for length in self.measure_lengths():
            offsets.append(position)
            position += length
        return offsets

    def first_tempo(self) -> Optional[Fraction]:
        for i in range(self.measure_count):
            for part in self.parts:
                if i < len(part.measures) and part.measures[i].tempo_qpm is not None:
                    return part.measures[i].tempo_qpm
        return None


@dataclass(frozen=True)
class InstrumentConstraints:
    canonical_name: str
    aliases: FrozenSet[str]
    midi_range: Tuple[int, int]
    max_span_semitones: Optional[int]
    monophonic: bool
    programs: FrozenSet[int] = frozenset()

    def __post_init__(self):
        low, high = self.midi_range
        if low > high:
            raise ValueError(f"{self.canonical_name}: range {low}..{high} is inverted")
        if self.canonical_name not in self.aliases:
            object.__setattr__(self, 'aliases', frozenset(self.aliases | {self.canonical_name}))


def absolute_notes(part: Part, offsets: List[Fraction]) -> List[Tuple[Fraction, NoteEvent]]:
    """(absolute onset, event) pairs for a part, in time order."""
    placed = []
    for measure in part.measures:
        start = offsets[measure.index] if measure.index < len(offsets) else Fraction(0)
        placed.extend((start + note.onset, note) for note in measure.notes)
    placed.sort(key=lambda item: (item[0], item[1].layer))
    return placed


def pitch_class_set(measure: Measure) -> FrozenSet[int]:
    return frozenset(p.midi % 12 for note in measure.notes for p in note.pitches)


def diatonic_pitch_classes(key: KeySignature) -> FrozenSet[int]:
    scale = MAJOR_SCALE if key.mode is Mode.MAJOR else NATURAL_MINOR_SCALE
    return frozenset((key.tonic_pitch_class + step) % 12 for step in scale)


def key_direction(key: KeySignature) -> KeyDirection:
    if key.fifths > 0:
        return KeyDirection.SHARP
    if key.fifths < 0:
        return KeyDirection.FLAT
    return KeyDirection.NEUTRAL
