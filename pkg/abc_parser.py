"""
ABC Parser for scorelint
Reads interleaved ABC into the Score model, validates measure structure,
and writes canonical interleaved ABC back out.

The supported subset is documented in docs/abc_subset.md.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Set, Tuple

from error_handler import LexError, RangeError, StructureError, UnrepresentableError
from score_model import (
    KeySignature, Measure, Mode, NoteEvent, ParseNotice, Part, RestEvent, Score,
    SpelledPitch, TimeSignature, TupletInfo, major_fifths,
)

logger = logging.getLogger(__name__)

DYNAMIC_MARKS = {
    'pppp', 'ppp', 'pp', 'p', 'mp', 'mf', 'f', 'ff', 'fff', 'ffff',
    'sfz', 'sf', 'sffz', 'fp', 'sfp', 'rfz', 'fz',
}

# Offset from the major key on the same tonic, by the first three letters of the mode.
MODE_OFFSETS = {'': 0, 'maj': 0, 'ion': 0, 'mix': -1, 'dor': -2, 'phr': -4, 'lyd': 1, 'loc': -5}
MINOR_MODES = {'m', 'min', 'aeo'}
CLEF_WORDS = {'treble', 'bass', 'alto', 'tenor', 'perc', 'clef', 'none', 'transpose', 'octave'}

ACCIDENTAL_ALTER = {'^^': 2, '^': 1, '=': 0, '_': -1, '__': -2}
ALTER_ACCIDENTAL = {v: k for k, v in ACCIDENTAL_ALTER.items()}

SUPPORTED_TUPLETS = range(2, 10)

LENGTH = r'\d*(?:/+\d*)?'

FIELD_LINE_PATTERN = re.compile(r'^([A-Za-z]):(.*)$')
MIDI_PROGRAM_PATTERN = re.compile(r'^%%MIDI\s+program\s+(?:\d+\s+)?(\d+)')
SCORE_DIRECTIVE_PATTERN = re.compile(r'^%%(?:score|staves)\s*(.*)$')
NAME_ATTRIBUTE_PATTERN = re.compile(r'\b(?:name|nm)\s*=\s*(?:"([^"]*)"|(\S+))')

NOTE_PATTERN = re.compile(r'(\^\^|\^|__|_|=)?([A-Ga-g])([\',]*)(' + LENGTH + ')')
CHORD_PATTERN = re.compile(
    r'\[((?:(?:\^\^|\^|__|_|=)?[A-Ga-g][\',]*' + LENGTH + r'-?\s*)+)\](' + LENGTH + ')'
)
REST_PATTERN = re.compile(r'([zx])(' + LENGTH + ')')
MULTI_REST_PATTERN = re.compile(r'([ZX])(\d*)')
INLINE_FIELD_PATTERN = re.compile(r'\[([A-Za-z]):([^\]]*)\]')
BAR_PATTERN = re.compile(r'::|:*(?:\[\||\|\]|\|\||\|)(?::+)?(?:\[?\d+(?:[,\-]\d+)*)?')
VARIANT_PATTERN = re.compile(r'\[\d+(?:[,\-]\d+)*')
TUPLET_PATTERN = re.compile(r'\((\d+)(?::(\d*))?(?::(\d*))?')
SLUR_PATTERN = re.compile(r'\.?\((?!\d)|\)')
DECORATION_PATTERN = re.compile(r'!([^!\s]*)!|\+([^+\s]*)\+')
SHORT_DECORATION_PATTERN = re.compile(r'[.~HLMOPSTuv]')
ANNOTATION_PATTERN = re.compile(r'"[^"]*"')
GRACE_PATTERN = re.compile(r'\{[^}]*\}')
BROKEN_RHYTHM_PATTERN = re.compile(r'<+|>+')
SKIP_PATTERN = re.compile(r'[\s`y$\\]+')


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class ValidationIssue:
    severity: Severity
    code: str
    message: str
    measure_index: Optional[int] = None
    part_id: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "severity": self.severity.value,
            "code": self.code,
            "measure_index": self.measure_index,
            "part_id": self.part_id,
            "message": self.message,
        }


@dataclass(frozen=True)
class ValidationReport:
    issues: Tuple[ValidationIssue, ...] = ()

    @property
    def is_valid(self) -> bool:
        return not any(i.severity is Severity.ERROR for i in self.issues)

    @property
    def errors(self) -> List[ValidationIssue]:
        return [i for i in self.issues if i.severity is Severity.ERROR]

    @property
    def warnings(self) -> List[ValidationIssue]:
        return [i for i in self.issues if i.severity is Severity.WARNING]

    def codes(self) -> List[str]:
        return [i.code for i in self.issues]


@dataclass
class VoiceDeclaration:
    voice_id: str
    name: Optional[str] = None
    midi_program: Optional[int] = None
    line: Optional[int] = None


@dataclass
class AbcDocument:
    """One tune split into header fields and body lines."""
    header_fields: List[Tuple[str, str]] = field(default_factory=list)
    voices: Dict[str, VoiceDeclaration] = field(default_factory=dict)
    score_order: List[str] = field(default_factory=list)
    body_lines: List[Tuple[int, str]] = field(default_factory=list)
    notices: List[ParseNotice] = field(default_factory=list)
    tune_program: Optional[int] = None  # %%MIDI program given before any V:

    def header_value(self, key: str) -> Optional[str]:
        values = [v for k, v in self.header_fields if k == key]
        return values[-1].strip() if values else None


def _parse_voice_declaration(value: str, line_no: int) -> VoiceDeclaration:
    tokens = value.split()
    if not tokens:
        raise StructureError("V: field without a voice id", line_no, 1)
    match = NAME_ATTRIBUTE_PATTERN.search(value)
    name = (match.group(1) if match.group(1) is not None else match.group(2)) if match else None
    return VoiceDeclaration(tokens[0], name, None, line_no)


def read_abc_document(text: str) -> AbcDocument:
    """
    Split ABC text into header and body.

    Raises:
        StructureError: If the header is not terminated by a K: field
    """
    document = AbcDocument()
    lines = text.replace('\r\n', '\n').replace('\r', '\n').split('\n')
    in_header = True
    seen_tune = False
    header_voice: Optional[VoiceDeclaration] = None

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if in_header:
            if not line:
                continue
            directive = SCORE_DIRECTIVE_PATTERN.match(line)
            program = MIDI_PROGRAM_PATTERN.match(line)
            if directive:
                document.score_order = re.findall(r'[A-Za-z0-9_]+', directive.group(1))
                continue
            if program:
                if header_voice is not None:
                    header_voice.midi_program = int(program.group(1))
                else:
                    document.tune_program = int(program.group(1))
                continue
            if line.startswith('%'):
                continue
            match = FIELD_LINE_PATTERN.match(line)
            if not match:
                raise StructureError("Music found before the K: field", line_no, 1)
            key, value = match.group(1), match.group(2)
            if key == 'X':
                if seen_tune:
                    raise StructureError("Second X: field before K:", line_no, 1)
                seen_tune = True
            document.header_fields.append((key, value))
            if key == 'V':
                header_voice = _parse_voice_declaration(value, line_no)
                document.voices.setdefault(header_voice.voice_id, header_voice)
                header_voice = document.voices[header_voice.voice_id]
            elif key == 'K':
                in_header = False
        else:
            if line.startswith('X:'):
                document.notices.append(ParseNotice(
                    "EXTRA_TUNE_IGNORED", "Only the first tune of a tunebook is read", line_no))
                break
            document.body_lines.append((line_no, raw))

    if in_header:
        raise StructureError("Missing K: field terminating the header", len(lines), 1)
    return document


def parse_length(text: str, line_no: int = 0, column: int = 0) -> Fraction:
    """Note-length multiplier: '', '2', '/', '//', '3/2', '/4'."""
    if not text:
        return Fraction(1)
    match = re.fullmatch(r'(\d*)(/*)(\d*)', text)
    numerator = int(match.group(1)) if match.group(1) else 1
    slashes = len(match.group(2))
    if slashes == 0:
        return Fraction(numerator)
    if not match.group(3):
        return Fraction(numerator, 2 ** slashes)
    if slashes > 1:
        raise LexError(f"Malformed note length {text!r}", line_no, column)
    denominator = int(match.group(3))
    if denominator == 0:
        raise LexError(f"Zero denominator in note length {text!r}", line_no, column)
    return Fraction(numerator, denominator)


def parse_key(value: str, line_no: int = 0) -> KeySignature:
    """
    Parse a K: value. Church modes fold onto the major key with the same signature.

    Raises:
        StructureError: For unsupported keys (bagpipe, beyond seven accidentals)
    """
    text = value.strip()
    match = re.match(r'^([A-G])([#b]?)\s*([A-Za-z]*)', text)
    if not text or text.lower().startswith('none') or (not match and '=' in text.split()[0]):
        return KeySignature.from_fifths(0)
    if not match:
        raise StructureError(f"Unsupported key {value.strip()!r}", line_no, 1)

    step = match.group(1)
    alter = {'': 0, '#': 1, 'b': -1}[match.group(2)]
    word = match.group(3).lower()
    base = major_fifths(step, alter)
    try:
        if word in MINOR_MODES or word[:3] in MINOR_MODES:
            return KeySignature(step, alter, Mode.MINOR, base - 3)
        if word[:3] in MODE_OFFSETS:
            return KeySignature.from_fifths(base + MODE_OFFSETS[word[:3]])
        if word in CLEF_WORDS:
            return KeySignature.from_fifths(base)
    except ValueError as e:
        raise StructureError(f"Unsupported key {value.strip()!r}: {e}", line_no, 1)
    raise StructureError(f"Unsupported key mode {word!r}", line_no, 1)


def parse_meter(value: str, line_no: int = 0) -> Optional[TimeSignature]:
    text = value.strip()
    if not text or text.lower() == 'none':
        return None
    if text in ('C', 'C|'):
        return TimeSignature.parse(text)
    numerator, _, denominator = text.partition('/')
    try:
        return TimeSignature(sum(int(n) for n in numerator.split('+')), int(denominator))
    except ValueError as e:
        raise StructureError(f"Unsupported meter {text!r}: {e}", line_no, 1)


def parse_unit(value: str, line_no: int = 0) -> Fraction:
    """L: field as a fraction of a whole note."""
    try:
        unit = Fraction(value.strip())
    except (ValueError, ZeroDivisionError):
        unit = Fraction(0)
    if unit <= 0:
        raise StructureError(f"Unsupported unit note length {value.strip()!r}", line_no, 1)
    return unit


def parse_tempo(value: str, unit: Fraction) -> Optional[Fraction]:
    """Q: value normalized to quarter notes per minute."""
    text = re.sub(r'"[^"]*"', ' ', value)
    match = re.search(r'((?:\d+/\d+\s*)+)=\s*(\d+(?:\.\d+)?)', text)
    if match:
        if any(int(u.split('/')[1]) == 0 for u in match.group(1).split()):
            return None
        beat = sum(Fraction(u) for u in match.group(1).split())
        qpm = Fraction(match.group(2)) * beat * 4
    else:
        match = re.fullmatch(r'\s*(\d+(?:\.\d+)?)\s*', text)
        if not match:
            return None
        qpm = Fraction(match.group(1)) * unit * 4
    return qpm if qpm > 0 else None


def default_tuplet_q(p: int, meter: TimeSignature) -> int:
    if p in (2, 4, 8):
        return 3
    if p in (3, 6):
        return 2
    compound = meter.numerator % 3 == 0 and meter.numerator > 3
    return 3 if compound else 2


@dataclass
class _EventDraft:
    onset: Fraction
    duration: Fraction
    layer: int
    pitches: List[SpelledPitch] = field(default_factory=list)
    explicit: List[bool] = field(default_factory=list)
    tie_forward: bool = False
    tie_backward: bool = False
    dynamic: Optional[str] = None
    tuplet: Optional[TupletInfo] = None

    @property
    def is_rest(self) -> bool:
        return not self.pitches


@dataclass
class _MeasureDraft:
    key: KeySignature
    meter: TimeSignature
    tempo: Optional[Fraction] = None
    events: List[_EventDraft] = field(default_factory=list)
    key_changes: List[Tuple[Fraction, KeySignature]] = field(default_factory=list)
    cursor: Fraction = Fraction(0)
    layer: int = 0
    touched: bool = False


@dataclass
class _TupletState:
    p: int
    q: int
    remaining: int
    start: Optional[Fraction]


class _VoiceState:
    """Running parse state of one voice."""

    def __init__(self, voice_id: str, key: KeySignature, meter: TimeSignature,
                 unit: Fraction, tempo: Optional[Fraction], declared: bool):
        self.voice_id = voice_id
        self.key = key
        self.meter = meter
        self.unit = unit
        self.declared = declared
        self.measures: List[Measure] = []
        self.draft = _MeasureDraft(key, meter, tempo)
        self.bar_accidentals: Dict[Tuple[str, int], int] = {}
        # Tied MIDI pitches awaiting their continuation, per overlay layer.
        self.pending_tie: Dict[int, Set[int]] = {}
        self.pending_dynamic: Optional[str] = None
        self.tuplet: Optional[_TupletState] = None
        self.broken: Optional[str] = None
        self.last_event: Optional[_EventDraft] = None

    def close_measure(self):
        draft = self.draft
        notes, rests = [], []
        for e in draft.events:
            if e.is_rest:
                rests.append(RestEvent(e.onset, e.duration, e.layer))
            else:
                notes.append(NoteEvent(
                    onset=e.onset, duration=e.duration, pitches=tuple(e.pitches),
                    tie_forward=e.tie_forward, tie_backward=e.tie_backward,
                    explicit_accidentals=tuple(e.explicit), dynamic=e.dynamic,
                    tuplet=e.tuplet, layer=e.layer,
                ))
        self.measures.append(Measure(
            index=len(self.measures), time_signature=draft.meter, key_signature=draft.key,
            tempo_qpm=draft.tempo, notes=tuple(notes), rests=tuple(rests),
            key_changes=tuple(sorted(draft.key_changes, key=lambda change: change[0])),
        ))
        self.draft = _MeasureDraft(self.key, self.meter)
        self.bar_accidentals.clear()
        self.last_event = None


class _ScoreBuilder:
    """Walks the body of an AbcDocument and builds a Score."""

    def __init__(self, document: AbcDocument, strict: bool):
        self.document = document
        self.strict = strict
        self.notices: List[ParseNotice] = list(document.notices)

        meter_text = document.header_value('M')
        meter = parse_meter(meter_text) if meter_text is not None else None
        if meter is None:
            self.notices.append(ParseNotice("FREE_METER", "No meter given; measuring against 4/4"))
            meter = TimeSignature(4, 4)
        unit_text = document.header_value('L')
        if unit_text:
            unit = parse_unit(unit_text)
        else:
            unit = Fraction(1, 16) if Fraction(meter.numerator, meter.denominator) < Fraction(3, 4) \
                else Fraction(1, 8)
        self.meter = meter
        self.unit = unit
        self.key = parse_key(document.header_value('K') or '')
        tempo_text = document.header_value('Q')
        self.tempo = parse_tempo(tempo_text, unit) if tempo_text else None
        if tempo_text and self.tempo is None:
            self.notices.append(ParseNotice("TEXT_TEMPO", f"Tempo {tempo_text!r} has no beat value"))

        self.declared: Dict[str, VoiceDeclaration] = dict(document.voices)
        self.states: Dict[str, _VoiceState] = {}
        self.current: Optional[_VoiceState] = None

    # voices

    def _state(self, voice_id: str, declared: bool) -> _VoiceState:
        if voice_id not in self.states:
            self.states[voice_id] = _VoiceState(
                voice_id, self.key, self.meter, self.unit, self.tempo, declared)
        return self.states[voice_id]

    def _switch_voice(self, value: str, line_no: int, column: int, declaration: bool):
        declared = _parse_voice_declaration(value, line_no)
        voice_id = declared.voice_id
        if voice_id not in self.declared:
            if declaration:
                self.declared[voice_id] = declared
            elif self.strict:
                raise StructureError(f"Voice {voice_id!r} is used but never declared", line_no, column)
            else:
                self.notices.append(ParseNotice(
                    "UNDECLARED_VOICE", f"Voice {voice_id!r} is used but never declared", line_no))
        elif declaration and declared.name and not self.declared[voice_id].name:
            self.declared[voice_id].name = declared.name
        self.current = self._state(voice_id, voice_id in self.declared)

    def _voice(self) -> _VoiceState:
        if self.current is None:
            voice_id = next(iter(self.declared), "1")
            if voice_id not in self.declared:
                self.declared[voice_id] = VoiceDeclaration(voice_id, midi_program=self.document.tune_program)
            self.current = self._state(voice_id, True)
        return self.current

    # fields

    def _apply_field(self, key: str, value: str, line_no: int, column: int, inline: bool):
        if key == 'V':
            self._switch_voice(value, line_no, column, declaration=not inline)
            return
        if key not in 'KMLQ':
            if key in 'wW':
                self.notices.append(ParseNotice("LYRICS_DROPPED", "Lyrics are not evaluated", line_no))
            return
        voice = self._voice()
        if key == 'K':
            voice.key = parse_key(value, line_no)
            draft = voice.draft
            if not draft.touched:
                draft.key = voice.key
            elif draft.key_changes and draft.key_changes[-1][0] == draft.cursor:
                draft.key_changes[-1] = (draft.cursor, voice.key)
            else:
                draft.key_changes.append((draft.cursor, voice.key))
        elif key == 'M':
            meter = parse_meter(value, line_no)
            if meter is not None:
                voice.meter = meter
                if not voice.draft.touched:
                    voice.draft.meter = meter
        elif key == 'L':
            voice.unit = parse_unit(value, line_no)
        elif key == 'Q':
            tempo = parse_tempo(value, voice.unit)
            if tempo is not None:
                voice.draft.tempo = tempo

    # events

    def _pitch(self, voice: _VoiceState, accidental: Optional[str], letter: str,
               octave_marks: str, line_no: int, column: int) -> Tuple[SpelledPitch, bool]:
        step = letter.upper()
        octave = (4 if letter.isupper() else 5) + octave_marks.count("'") - octave_marks.count(',')
        if accidental:
            alter = ACCIDENTAL_ALTER[accidental]
            voice.bar_accidentals[(step, octave)] = alter
        else:
            alter = voice.bar_accidentals.get((step, octave), voice.key.alter_for(step))
        pitch = SpelledPitch(step, alter, octave)
        if not 0 <= pitch.midi <= 127:
            raise RangeError(f"Pitch {pitch.name} (MIDI {pitch.midi}) is outside 0-127", line_no, column)
        return pitch, bool(accidental)

    def _place(self, voice: _VoiceState, multiplier: Fraction, pitches: List[SpelledPitch],
               explicit: List[bool], line_no: int, column: int) -> _EventDraft:
        draft = voice.draft
        duration = voice.unit * 4 * multiplier
        tuplet_info = None
        if voice.tuplet is not None:
            state = voice.tuplet
            if state.start is None:
                state.start = draft.cursor
            duration *= Fraction(state.q, state.p)
            tuplet_info = TupletInfo(state.p, state.q, state.start)
            state.remaining -= 1
            if state.remaining == 0:
                voice.tuplet = None

        if voice.broken:
            previous = voice.last_event
            if previous is None or previous.layer != draft.layer:
                raise LexError("Broken rhythm needs a preceding note in the same measure",
                               line_no, column)
            shift = Fraction(1, 2 ** len(voice.broken))
            longer, shorter = 2 - shift, shift
            if voice.broken[0] == '>':
                previous.duration *= longer
                duration *= shorter
            else:
                previous.duration *= shorter
                duration *= longer
            draft.cursor = previous.onset + previous.duration
            voice.broken = None

        if duration <= 0:
            raise LexError("Zero-length note", line_no, column)
        event = _EventDraft(draft.cursor, duration, draft.layer, pitches, explicit, tuplet=tuplet_info)
        if pitches:
            midis = {p.midi for p in pitches}
            event.tie_backward = bool(voice.pending_tie.get(draft.layer, set()) & midis)
            event.dynamic = voice.pending_dynamic
            voice.pending_dynamic = None
        voice.pending_tie.pop(draft.layer, None)
        draft.events.append(event)
        draft.cursor += duration
        draft.touched = True
        voice.last_event = event
        return event

    def _barline(self, voice: _VoiceState, line_no: int, column: int):
        if voice.broken:
            raise LexError("Broken rhythm across a barline", line_no, column)
        if voice.draft.touched:
            voice.close_measure()

    def _music_line(self, line_no: int, line: str):
        pos = 0
        while pos < len(line):
            column = pos + 1
            char = line[pos]
            if char == '%':
                break

            match = SKIP_PATTERN.match(line, pos)
            if match:
                pos = match.end()
                continue

            match = INLINE_FIELD_PATTERN.match(line, pos)
            if match:
                self._apply_field(match.group(1), match.group(2), line_no, column, inline=True)
                pos = match.end()
                continue

            voice = self._voice()

            match = BAR_PATTERN.match(line, pos)
            if match:
                self._barline(voice, line_no, column)
                pos = match.end()
                continue

            match = VARIANT_PATTERN.match(line, pos)
            if match:
                pos = match.end()
                continue

            match = CHORD_PATTERN.match(line, pos)
            if match:
                self._chord(voice, match, line_no, column)
                pos = match.end()
                continue

            match = NOTE_PATTERN.match(line, pos)
            if match:
                pitch, explicit = self._pitch(voice, match.group(1), match.group(2),
                                              match.group(3), line_no, column)
                multiplier = parse_length(match.group(4), line_no, column)
                self._place(voice, multiplier, [pitch], [explicit], line_no, column)
                pos = match.end()
                continue

            match = REST_PATTERN.match(line, pos)
            if match:
                multiplier = parse_length(match.group(2), line_no, column)
                self._place(voice, multiplier, [], [], line_no, column)
                pos = match.end()
                continue

            match = MULTI_REST_PATTERN.match(line, pos)
            if match:
                self._multi_measure_rest(voice, int(match.group(2) or 1))
                pos = match.end()
                continue

            match = TUPLET_PATTERN.match(line, pos)
            if match:
                self._tuplet(voice, match, line_no, column)
                pos = match.end()
                continue

            match = DECORATION_PATTERN.match(line, pos)
            if match:
                mark = match.group(1) if match.group(1) is not None else match.group(2)
                if mark in DYNAMIC_MARKS:
                    voice.pending_dynamic = mark
                pos = match.end()
                continue

            match = GRACE_PATTERN.match(line, pos)
            if match:
                self.notices.append(ParseNotice(
                    "GRACE_NOTES_DROPPED", "Grace notes are parsed and dropped", line_no))
                pos = match.end()
                continue

            match = BROKEN_RHYTHM_PATTERN.match(line, pos)
            if match:
                if voice.broken:
                    raise LexError("Broken rhythm given twice in a row", line_no, column)
                voice.broken = match.group(0)
                pos = match.end()
                continue

            if char == '-':
                event = voice.last_event
                if event is None or event.is_rest:
                    raise LexError("Tie without a preceding note", line_no, column)
                event.tie_forward = True
                voice.pending_tie[event.layer] = {p.midi for p in event.pitches}
                pos += 1
                continue

            if char == '&':
                voice.draft.layer += 1
                voice.draft.cursor = Fraction(0)
                voice.last_event = None
                pos += 1
                continue

            for pattern in (SLUR_PATTERN, ANNOTATION_PATTERN, SHORT_DECORATION_PATTERN):
                match = pattern.match(line, pos)
                if match:
                    pos = match.end()
                    break
            else:
                if char in '^_' and re.match(r'[\^_]\d*/', line[pos:]):
                    raise LexError("Microtonal accidentals are not supported", line_no, column)
                raise LexError(f"Unexpected character {char!r}", line_no, column)

    def _chord(self, voice: _VoiceState, match, line_no: int, column: int):
        pitches, explicit, tied = [], [], []
        first_length = None
        for note in NOTE_PATTERN.finditer(match.group(1)):
            pitch, is_explicit = self._pitch(voice, note.group(1), note.group(2),
                                             note.group(3), line_no, column)
            if pitch in pitches:
                continue
            pitches.append(pitch)
            explicit.append(is_explicit)
            if first_length is None:
                first_length = parse_length(note.group(4), line_no, column)
            following = match.group(1)[note.end():note.end() + 1]
            if following == '-':
                tied.append(pitch.midi)
        multiplier = first_length * parse_length(match.group(2), line_no, column)
        event = self._place(voice, multiplier, pitches, explicit, line_no, column)
        if tied:
            event.tie_forward = True
            voice.pending_tie[event.layer] = set(tied)

    def _tuplet(self, voice: _VoiceState, match, line_no: int, column: int):
        p = int(match.group(1))
        if p not in SUPPORTED_TUPLETS:
            raise LexError(f"Tuplet ({p} is not supported", line_no, column)
        q = int(match.group(2)) if match.group(2) else default_tuplet_q(p, voice.meter)
        r = int(match.group(3)) if match.group(3) else p
        voice.tuplet = _TupletState(p, q, r, None)

    def _multi_measure_rest(self, voice: _VoiceState, count: int):
        for _ in range(count):
            if voice.draft.touched:
                voice.close_measure()
            capacity = voice.draft.meter.capacity
            voice.draft.events.append(_EventDraft(voice.draft.cursor, capacity, voice.draft.layer))
            voice.draft.cursor += capacity
            voice.draft.touched = True
        voice.pending_tie.clear()

    def build(self) -> Score:
        for line_no, raw in self.document.body_lines:
            stripped = raw.strip()
            if not stripped or stripped.startswith('%') and not stripped.startswith('%%'):
                continue
            program = MIDI_PROGRAM_PATTERN.match(stripped)
            if program:
                voice = self._voice()
                self.declared.setdefault(voice.voice_id, VoiceDeclaration(voice.voice_id))
                self.declared[voice.voice_id].midi_program = int(program.group(1))
                continue
            if stripped.startswith('%%'):
                continue
            field_match = FIELD_LINE_PATTERN.match(stripped)
            if field_match:
                self._apply_field(field_match.group(1), field_match.group(2), line_no, 1, inline=False)
                continue
            self._music_line(line_no, raw)

        for state in self.states.values():
            if state.draft.touched:
                state.close_measure()

        return Score(
            parts=tuple(self._parts()),
            title=self.document.header_value('T'),
            genre=self.document.header_value('G'),
            composer=self.document.header_value('C'),
            notices=tuple(self.notices),
        )

    def _parts(self) -> List[Part]:
        order: List[str] = []
        for voice_id in list(self.document.score_order) + list(self.declared) + list(self.states):
            if voice_id not in order and (voice_id in self.declared or voice_id in self.states):
                order.append(voice_id)
        parts = []
        for voice_id in order:
            declaration = self.declared.get(voice_id)
            state = self.states.get(voice_id)
            parts.append(Part(
                part_id=voice_id,
                declared_name=declaration.name if declaration else None,
                midi_program=declaration.midi_program if declaration else None,
                measures=tuple(state.measures) if state else (),
                declared=declaration is not None,
            ))
        return parts


def parse_abc(text: str, strict: bool = True) -> Score:
    """
    Parse one interleaved ABC tune into a Score.

    Args:
        text: ABC source; LF or CRLF line endings
        strict: Raise on undeclared voices instead of flagging the part

    Raises:
        LexError: Illegal token
        StructureError: Missing K:, undeclared voice (strict), unsupported key
        RangeError: Pitch outside MIDI 0-127
    """
    document = read_abc_document(text)
    score = _ScoreBuilder(document, strict).build()
    logger.debug(f"Parsed {len(score.parts)} parts, {score.measure_count} measures")
    return score


def validate(score: Score) -> ValidationReport:
    """Check measure capacities, part alignment and voice declarations."""
    issues: List[ValidationIssue] = []

    for notice in score.notices:
        issues.append(ValidationIssue(Severity.WARNING, notice.code, notice.message))

    if not score.parts:
        issues.append(ValidationIssue(Severity.ERROR, "NO_PARTS", "Score has no parts"))
        return ValidationReport(tuple(issues))

    expected = score.measure_count
    for part in score.parts:
        if not part.declared:
            issues.append(ValidationIssue(
                Severity.ERROR, "UNDECLARED_VOICE",
                f"Voice {part.part_id!r} is used but never declared", part_id=part.part_id))
        if len(part.measures) != expected:
            issues.append(ValidationIssue(
                Severity.ERROR, "PART_LENGTH_MISMATCH",
                f"Part has {len(part.measures)} measures, expected {expected}", part_id=part.part_id))
        if part.note_count == 0:
            issues.append(ValidationIssue(
                Severity.WARNING, "EMPTY_PART", "Part has no notes", part_id=part.part_id))

        last = len(part.measures) - 1
        for measure in part.measures:
            content, capacity = measure.content_duration, measure.capacity
            if content > capacity:
                issues.append(ValidationIssue(
                    Severity.ERROR, "MEASURE_OVERFULL",
                    f"Measure holds {content} quarters, capacity {capacity}",
                    measure.index, part.part_id))
            elif content < capacity:
                if measure.index == 0:
                    code, severity = "ANACRUSIS", Severity.WARNING
                elif measure.index == last:
                    code, severity = "SHORT_FINAL_MEASURE", Severity.WARNING
                else:
                    code, severity = "MEASURE_UNDERFULL", Severity.ERROR
                issues.append(ValidationIssue(
                    severity, code, f"Measure holds {content} quarters, capacity {capacity}",
                    measure.index, part.part_id))

    if score.first_tempo() is None:
        issues.append(ValidationIssue(Severity.WARNING, "MISSING_TEMPO", "Score declares no tempo"))

    return ValidationReport(tuple(issues))


# serialization

def _is_dyadic(value: Fraction) -> bool:
    denominator = value.denominator
    return denominator & (denominator - 1) == 0


def _length_text(multiplier: Fraction) -> str:
    if multiplier.denominator == 1:
        return '' if multiplier == 1 else str(multiplier.numerator)
    if multiplier.numerator == 1:
        return f"/{multiplier.denominator}"
    return f"{multiplier.numerator}/{multiplier.denominator}"


def _key_text(key: KeySignature) -> str:
    return f"{key.tonic}{'m' if key.mode is Mode.MINOR else ''}"


def _tempo_text(qpm: Fraction) -> str:
    if qpm.denominator == 1:
        return f"1/4={qpm.numerator}"
    return f"1/{4 * qpm.denominator}={qpm.numerator}"


def _fit_tuplet(duration: Fraction) -> Optional[Tuple[int, int]]:
    """Smallest supported (p, q) making a lone duration writable."""
    for p in SUPPORTED_TUPLETS:
        for q in sorted({2, 3, p - 1}):
            if q > 0 and _is_dyadic(duration * p / q):
                return p, q
    return None


class _MeasureWriter:
    """Writes one measure of one voice, mirroring the parser's accidental rules."""

    def __init__(self, key: KeySignature):
        self.key = key
        self.bar_accidentals: Dict[Tuple[str, int], int] = {}

    def pitch(self, pitch: SpelledPitch, explicit: bool) -> str:
        expected = self.bar_accidentals.get((pitch.step, pitch.octave), self.key.alter_for(pitch.step))
        accidental = ''
        if explicit or pitch.alter != expected:
            accidental = ALTER_ACCIDENTAL[pitch.alter]
            self.bar_accidentals[(pitch.step, pitch.octave)] = pitch.alter
        if pitch.octave >= 5:
            letter = pitch.step.lower() + "'" * (pitch.octave - 5)
        else:
            letter = pitch.step + ',' * (4 - pitch.octave)
        return accidental + letter

    def note(self, note: NoteEvent, base: Fraction) -> str:
        text = f"!{note.dynamic}!" if note.dynamic else ''
        written = [self.pitch(p, e) for p, e in zip(note.pitches, note.explicit_accidentals)]
        body = written[0] if len(written) == 1 else '[' + ''.join(written) + ']'
        text += body + _length_text(base)
        return text + ('-' if note.tie_forward else '')

    def events(self, notes: List[NoteEvent], rests: List[RestEvent],
               key_changes: Tuple[Tuple[Fraction, KeySignature], ...] = ()) -> str:
        ordered = sorted([(n.onset, 0, n) for n in notes] + [(r.onset, 1, r) for r in rests],
                         key=lambda item: (item[0], item[1]))
        tokens: List[str] = []
        cursor = Fraction(0)
        group: Optional[TupletInfo] = None
        changes = list(key_changes)
        for index, (onset, _, event) in enumerate(ordered):
            if onset < cursor:
                raise UnrepresentableError(f"Overlapping events at onset {onset} in one layer")
            while changes and changes[0][0] <= onset:
                at, key = changes.pop(0)
                if at > cursor:
                    tokens.append(self._rest(at - cursor))
                    cursor, group = at, None
                tokens.append(self.key_change(key))
            if onset > cursor:
                tokens.append(self._rest(onset - cursor))
                group = None
            tuplet = event.tuplet if isinstance(event, NoteEvent) else None
            if tuplet is not None:
                if tuplet != group:
                    run = 1
                    for _, _, later in ordered[index + 1:]:
                        if not isinstance(later, NoteEvent) or later.tuplet != tuplet:
                            break
                        run += 1
                    tokens.append(f"({tuplet.p}:{tuplet.q}:{run}")
                    group = tuplet
                base = event.duration / tuplet.ratio
                if not _is_dyadic(base):
                    raise UnrepresentableError(f"Duration {event.duration} inside ({tuplet.p} tuplet")
            else:
                group = None
                base = event.duration
                if not _is_dyadic(base):
                    fit = _fit_tuplet(base)
                    if fit is None:
                        raise UnrepresentableError(f"Duration {event.duration} is not writable")
                    tokens.append(f"({fit[0]}:{fit[1]}:1")
                    base = base * fit[0] / fit[1]
            if isinstance(event, NoteEvent):
                tokens.append(self.note(event, base))
            else:
                tokens.append('z' + _length_text(base))
            cursor = onset + event.duration
        tokens.extend(self.key_change(key) for _, key in changes)
        return ' '.join(tokens)

    def key_change(self, key: KeySignature) -> str:
        self.key = key
        return f"[K:{_key_text(key)}]"

    def _rest(self, gap: Fraction) -> str:
        if _is_dyadic(gap):
            return 'z' + _length_text(gap)
        fit = _fit_tuplet(gap)
        if fit is None:
            raise UnrepresentableError(f"Gap of {gap} quarters is not writable")
        return f"({fit[0]}:{fit[1]}:1 z" + _length_text(gap * fit[0] / fit[1])


def _measure_text(measure: Measure, previous: Optional[Measure], header: Dict[str, object]) -> str:
    prefix = ''
    key_before = previous.closing_key if previous else header['K']
    meter_before = previous.time_signature if previous else header['M']
    if measure.time_signature != meter_before:
        prefix += f"[M:{measure.time_signature}]"
    if measure.key_signature != key_before:
        prefix += f"[K:{_key_text(measure.key_signature)}]"
    if measure.tempo_qpm is not None and not (previous is None and header['Q'] == measure.tempo_qpm):
        prefix += f"[Q:{_tempo_text(measure.tempo_qpm)}]"

    writer = _MeasureWriter(measure.key_signature)
    layers = sorted({n.layer for n in measure.notes} | {r.layer for r in measure.rests})
    if not layers:
        return prefix + 'x' + _length_text(measure.capacity)
    chunks = [
        writer.events([n for n in measure.notes if n.layer == layer],
                      [r for r in measure.rests if r.layer == layer],
                      measure.key_changes if layer == layers[0] else ())
        for layer in layers
    ]
    return prefix + ' & '.join(chunks)


def serialize_abc(score: Score) -> str:
    """
    Write a Score as canonical interleaved ABC (L:1/4, one line per measure).

    Raises:
        UnrepresentableError: Duration not writable with the supported tuplets
            or a part name holding a double quote or line break
    """
    lead = next((p for p in score.parts if p.measures), None)
    first_key = lead.measures[0].key_signature if lead else KeySignature.from_fifths(0)
    first_meter = lead.measures[0].time_signature if lead else TimeSignature(4, 4)
    opening_tempi = {p.measures[0].tempo_qpm for p in score.parts if p.measures}
    shared_tempo = opening_tempi.pop() if len(opening_tempi) == 1 else None
    header = {'K': first_key, 'M': first_meter, 'Q': shared_tempo}

    lines = ["X:1"]
    if score.title:
        lines.append(f"T:{score.title}")
    if score.composer:
        lines.append(f"C:{score.composer}")
    if score.genre:
        lines.append(f"G:{score.genre}")
    lines.append("%%score " + ' '.join(p.part_id for p in score.parts))
    for part in score.parts:
        declaration = f"V:{part.part_id}"
        if part.declared_name:
            if any(c in part.declared_name for c in '"\r\n'):
                raise UnrepresentableError(f"Part name {part.declared_name!r} cannot be quoted in a V: field")
            declaration += f' name="{part.declared_name}"'
        lines.append(declaration)
        if part.midi_program is not None:
            lines.append(f"%%MIDI program {part.midi_program}")
    lines.append(f"M:{first_meter}")
    lines.append("L:1/4")
    if shared_tempo is not None:
        lines.append(f"Q:{_tempo_text(shared_tempo)}")
    lines.append(f"K:{_key_text(first_key)}")

    for index in range(score.measure_count):
        segments = []
        for part in score.parts:
            if index >= len(part.measures):
                continue
            previous = part.measures[index - 1] if index > 0 else None
            segments.append(f"[V:{part.part_id}]" + _measure_text(part.measures[index], previous, header) + '|')
        lines.append(''.join(segments))
    return '\n'.join(lines) + '\n'
