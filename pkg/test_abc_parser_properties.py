"""
Property-based tests for ABC parsing, validation and serialization.
"""

import pytest
from fractions import Fraction
from pathlib import Path
from hypothesis import given, settings, strategies as st

from abc_parser import (
    Severity, parse_abc, parse_key, parse_length, parse_tempo, read_abc_document, serialize_abc, validate,
)
from error_handler import LexError, RangeError, StructureError, UnrepresentableError
from score_model import (
    KeySignature, Measure, Mode, NoteEvent, Part, Score, SpelledPitch, TimeSignature, TupletInfo,
)

FIXTURES = Path(__file__).parent / "fixtures"

HEADER = "X:1\nL:1/4\nM:4/4\nQ:1/4=100\n"


def midis(part):
    return [note.midis for m in part.measures for note in m.notes]


class TestParseExamples:
    """Hand-checked parses."""

    def test_c_major_scale_fragment(self):
        score = parse_abc("X:1\nL:1/4\nM:4/4\nK:C\n|CDEF|")
        assert len(score.parts) == 1
        assert score.measure_count == 1
        notes = score.parts[0].measures[0].notes
        assert [n.midis[0] for n in notes] == [60, 62, 64, 65]
        assert [n.duration for n in notes] == [1, 1, 1, 1]
        assert [n.onset for n in notes] == [0, 1, 2, 3]

    def test_key_signature_applies(self):
        score = parse_abc("X:1\nL:1/4\nM:4/4\nK:D\n|F2A2|")
        notes = score.parts[0].measures[0].notes
        assert [n.midis[0] for n in notes] == [66, 69]
        assert [n.duration for n in notes] == [2, 2]
        assert notes[0].pitches[0].name == "F#4"
        assert notes[0].explicit_accidentals == (False,)

    def test_accidental_propagates_within_bar(self):
        score = parse_abc("X:1\nL:1/8\nM:4/4\nK:C\n|^FGF z/ z/ z z2|")
        notes = score.parts[0].measures[0].notes
        assert [n.midis[0] for n in notes] == [66, 67, 66]
        assert notes[0].explicit_accidentals == (True,)
        assert notes[2].explicit_accidentals == (False,)

    def test_accidental_resets_at_barline(self):
        score = parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|^F F|F F|")
        assert midis(score.parts[0]) == [(66,), (66,), (65,), (65,)]

    def test_octave_marks_and_lengths(self):
        score = parse_abc("X:1\nL:1/8\nM:4/4\nK:C\n|C, c c' C3/2 C/ C// C//|")
        notes = score.parts[0].measures[0].notes
        assert [n.midis[0] for n in notes[:3]] == [48, 72, 84]
        assert [n.duration for n in notes[3:]] == [Fraction(3, 4), Fraction(1, 4),
                                                    Fraction(1, 8), Fraction(1, 8)]

    def test_chords_and_ties(self):
        score = parse_abc("X:1\nL:1/4\nM:4/4\nK:C\n|[CEG]2- [CEG]2|[C-E]2 C2|")
        first, second = score.parts[0].measures
        assert first.notes[0].is_chord
        assert first.notes[0].tie_forward
        assert first.notes[1].tie_backward
        # Only C is tied inside the chord.
        assert second.notes[0].tie_forward
        assert second.notes[1].tie_backward

    def test_tuplets_scale_exactly(self):
        score = parse_abc("X:1\nL:1/8\nM:2/4\nK:C\n|(3CDE F2|")
        notes = score.parts[0].measures[0].notes
        assert [n.duration for n in notes] == [Fraction(1, 3)] * 3 + [Fraction(1)]
        assert notes[1].onset == Fraction(1, 3)
        assert notes[0].tuplet == TupletInfo(3, 2, Fraction(0))
        assert score.parts[0].measures[0].content_duration == 2

    def test_broken_rhythm(self):
        score = parse_abc("X:1\nL:1/8\nM:2/4\nK:C\n|C>D E<F|")
        notes = score.parts[0].measures[0].notes
        assert [n.duration for n in notes] == [Fraction(3, 4), Fraction(1, 4), Fraction(1, 4), Fraction(3, 4)]

    def test_rests_and_multi_measure_rests(self):
        score = parse_abc("X:1\nL:1/4\nM:3/4\nK:C\n|C z z|Z2|x3|")
        part = score.parts[0]
        assert len(part.measures) == 4
        assert [m.rests_only for m in part.measures] == [False, True, True, True]
        assert all(m.content_duration == 3 for m in part.measures)

    def test_inline_fields(self):
        score = parse_abc("X:1\nL:1/4\nM:4/4\nQ:1/4=100\nK:C\n|CDEF|[M:3/4][K:G][Q:1/4=80]FGA|")
        first, second = score.parts[0].measures
        assert first.tempo_qpm == 100
        assert second.time_signature == TimeSignature(3, 4)
        assert second.key_signature == KeySignature.from_tonic('G')
        assert second.tempo_qpm == 80
        assert second.notes[0].midis == (66,)

    def test_voice_overlay(self):
        score = parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|c2 & C C|")
        measure = score.parts[0].measures[0]
        assert {n.layer for n in measure.notes} == {0, 1}
        assert measure.content_duration == 2

    def test_tie_survives_overlay(self):
        score = parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C2- & E2|C2 & E2|")
        first, second = score.parts[0].measures
        assert first.notes[0].tie_forward
        upper = [n for n in second.notes if n.layer == 0]
        lower = [n for n in second.notes if n.layer == 1]
        assert upper[0].tie_backward
        assert not lower[0].tie_backward

    def test_tie_belongs_to_its_layer(self):
        score = parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C2 & C2-|C2 & C2|")
        second = score.parts[0].measures[1]
        assert [n.tie_backward for n in second.notes] == [False, True]

    def test_key_change_inside_measure(self):
        score = parse_abc("X:1\nL:1/4\nM:4/4\nK:C\n|C D [K:D] F G|A B c d|")
        first, second = score.parts[0].measures
        c_major, d_major = KeySignature.from_tonic('C'), KeySignature.from_tonic('D')
        assert first.key_signature == c_major
        assert first.key_changes == ((Fraction(2), d_major),)
        assert first.key_at(Fraction(1)) == c_major
        assert first.key_at(Fraction(2)) == d_major
        assert first.notes[2].midis == (66,)
        assert second.key_signature == d_major
        assert second.key_changes == ()

    def test_dynamics(self):
        score = parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|!p!C !ff!D|")
        assert [n.dynamic for n in score.parts[0].measures[0].notes] == ["p", "ff"]

    def test_voices_and_names(self):
        score = parse_abc((FIXTURES / "chorale.abc").read_text(encoding="utf-8"))
        assert [p.part_id for p in score.parts] == ["S", "B"]
        assert [p.declared_name for p in score.parts] == ["Soprano", "Bass Voice"]
        assert all(len(p.measures) == 8 for p in score.parts)
        assert score.title == "Chorale in G"
        assert score.genre == "Chorale"

    def test_midi_program_binding(self):
        text = "X:1\nL:1/4\nM:2/4\nV:1\n%%MIDI program 73\nV:2 name=\"Cello\"\nK:C\n[V:1] C2|\n[V:2] C,2|\n"
        score = parse_abc(text)
        assert score.parts[0].midi_program == 73
        assert score.parts[1].midi_program is None

    def test_crlf_and_grace_notes(self):
        score = parse_abc("X:1\r\nL:1/4\r\nM:2/4\r\nK:C\r\n|{g}C D|\r\n")
        assert midis(score.parts[0]) == [(60,), (62,)]
        assert "GRACE_NOTES_DROPPED" in [n.code for n in score.notices]

    def test_only_first_tune(self):
        score = parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C D|\nX:2\nK:C\n|E F|\n")
        assert midis(score.parts[0]) == [(60,), (62,)]
        assert "EXTRA_TUNE_IGNORED" in [n.code for n in score.notices]


class TestParseErrors:
    """Errors carry their 1-based position."""

    def test_missing_key_field(self):
        with pytest.raises(StructureError):
            parse_abc("X:1\nL:1/4\nM:4/4\n")

    def test_undeclared_voice_strict(self):
        text = "X:1\nL:1/4\nM:2/4\nV:1\nK:C\n[V:1] C2|\n[V:2] D2|\n"
        with pytest.raises(StructureError) as info:
            parse_abc(text)
        assert info.value.line == 7

    def test_undeclared_voice_lenient(self):
        text = "X:1\nL:1/4\nM:2/4\nV:1\nK:C\n[V:1] C2|\n[V:2] D2|\n"
        score = parse_abc(text, strict=False)
        assert [p.declared for p in score.parts] == [True, False]
        report = validate(score)
        assert not report.is_valid
        assert "UNDECLARED_VOICE" in [i.code for i in report.errors]

    def test_illegal_token(self):
        with pytest.raises(LexError) as info:
            parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C ? D|")
        assert info.value.line == 5
        assert info.value.column == 4

    def test_pitch_out_of_range(self):
        with pytest.raises(RangeError):
            parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|c'''''' C|")

    def test_field_helpers(self):
        assert parse_length("") == 1
        assert parse_length("/") == Fraction(1, 2)
        assert parse_length("3/2") == Fraction(3, 2)
        assert parse_key("Am") == KeySignature.from_tonic('A', Mode.MINOR)
        assert parse_key("D dorian") == KeySignature.from_tonic('C')
        assert parse_key("none") == KeySignature.from_tonic('C')
        assert parse_tempo("1/8=150", Fraction(1, 8)) == 75
        assert parse_tempo("3/8=60", Fraction(1, 8)) == 90
        assert parse_tempo("120", Fraction(1, 8)) == 60
        assert parse_tempo('"Allegro"', Fraction(1, 8)) is None
        with pytest.raises(LexError):
            parse_length("1/0")

    def test_document_split(self):
        document = read_abc_document("X:1\nT:Title\nV:A name=\"Flute\"\nK:C\nCDEF|\n")
        assert document.header_value("T") == "Title"
        assert document.voices["A"].name == "Flute"
        assert document.body_lines[0] == (5, "CDEF|")


VALIDATOR_FIXTURES = sorted((FIXTURES / "validator").glob("*.abc"))


class TestValidatorProperties:
    """Validator classification."""

    @pytest.mark.parametrize("path", VALIDATOR_FIXTURES, ids=lambda p: p.stem)
    def test_fixture_suite(self, path):
        """
        Feature: scorelint, Property 5: Validator classifies every labeled fixture
        clean_* and anacrusis_* are valid; the other prefixes name the expected error.
        """
        label = path.stem.split("_")[0]
        report = validate(parse_abc(path.read_text(encoding="utf-8"), strict=False))
        if label in ("clean", "anacrusis"):
            assert report.is_valid, report.codes()
            if label == "anacrusis":
                assert "ANACRUSIS" in [i.code for i in report.warnings]
        else:
            expected = {"overfull": "MEASURE_OVERFULL", "underfull": "MEASURE_UNDERFULL",
                        "undeclared": "UNDECLARED_VOICE"}[label]
            assert not report.is_valid
            assert expected in [i.code for i in report.errors]

    def test_fixture_suite_size(self):
        assert len(list((FIXTURES / "validator").glob("*.abc"))) == 20

    def test_chorale_is_valid(self):
        report = validate(parse_abc((FIXTURES / "chorale.abc").read_text(encoding="utf-8")))
        assert report.is_valid
        assert report.errors == []

    def test_overfull_measure(self):
        report = validate(parse_abc(HEADER + "K:C\n|C D E F G|C4|C4|"))
        assert [i.code for i in report.errors] == ["MEASURE_OVERFULL"]
        assert report.errors[0].measure_index == 0

    def test_anacrusis_is_warning(self):
        report = validate(parse_abc(HEADER + "K:C\nC|C D E F|G4|"))
        assert report.is_valid
        assert "ANACRUSIS" in report.codes()

    def test_part_length_mismatch(self):
        text = HEADER + "V:1\nV:2\nK:C\n[V:1] C4|D4|\n[V:2] C4|\n"
        report = validate(parse_abc(text))
        assert "PART_LENGTH_MISMATCH" in [i.code for i in report.errors]

    def test_missing_tempo_warning(self):
        report = validate(parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C D|"))
        assert report.is_valid
        assert "MISSING_TEMPO" in [i.code for i in report.warnings]
        assert all(i.severity is Severity.WARNING for i in report.issues)

    @given(st.lists(st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(3, 2), Fraction(2)]),
                    min_size=1, max_size=8))
    def test_validator_soundness(self, durations):
        """
        Feature: scorelint, Property 6: A middle measure is flagged iff its content differs from capacity
        """
        ts, key = TimeSignature(4, 4), KeySignature.from_fifths(0)
        pitch = (SpelledPitch('C', 0, 4),)
        full = lambda i: Measure(i, ts, key, Fraction(100), (NoteEvent(Fraction(0), Fraction(4), pitch),))
        onsets = [sum(durations[:i], Fraction(0)) for i in range(len(durations))]
        middle = Measure(1, ts, key, notes=tuple(NoteEvent(o, d, pitch) for o, d in zip(onsets, durations)))
        report = validate(Score((Part("1", measures=(full(0), middle, full(2))),)))
        content = sum(durations, Fraction(0))
        flagged = {i.code for i in report.errors if i.measure_index == 1}
        if content > 4:
            assert flagged == {"MEASURE_OVERFULL"}
        elif content < 4:
            assert flagged == {"MEASURE_UNDERFULL"}
        else:
            assert report.is_valid


ACCIDENTALS = {None: None, '^': 1, '_': -1, '=': 0}


class TestAccidentalScopeProperties:

    @given(st.lists(st.one_of(st.just('|'), st.sampled_from(list(ACCIDENTALS))), min_size=1, max_size=40))
    def test_accidentals_never_cross_barlines(self, stream):
        """
        Feature: scorelint, Property 7: Explicit accidentals last until the barline
        For any stream of F notes with random accidentals and injected barlines,
        each F takes the last accidental written in its bar, else the key's.
        """
        tokens, expected, current = [], [], None
        for item in stream:
            if item == '|':
                tokens.append('|')
                current = None
                continue
            tokens.append((item or '') + 'F')
            if item is not None:
                current = ACCIDENTALS[item]
            expected.append(65 + (current or 0))
        text = "X:1\nL:1/4\nM:none\nK:C\n" + ' '.join(tokens) + "\n"
        score = parse_abc(text)
        parsed = [n.midis[0] for m in score.parts[0].measures for n in m.notes]
        assert parsed == expected


# Round-trip generator: grid-quantized notes filling every measure.

METERS = [TimeSignature(2, 4), TimeSignature(3, 4), TimeSignature(4, 4), TimeSignature(6, 8)]
STEPS = [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1), Fraction(3, 2), Fraction(2), Fraction(3)]


@st.composite
def small_scores(draw):
    n_parts = draw(st.integers(min_value=1, max_value=4))
    n_measures = draw(st.integers(min_value=1, max_value=16))
    layout = []
    key, meter, tempo = None, None, None
    for i in range(n_measures):
        if i == 0 or draw(st.integers(0, 5)) == 0:
            key = KeySignature.from_fifths(draw(st.integers(-6, 6)), draw(st.sampled_from(list(Mode))))
        if i == 0 or draw(st.integers(0, 5)) == 0:
            meter = draw(st.sampled_from(METERS))
        tempo = None
        if i == 0 or draw(st.integers(0, 7)) == 0:
            tempo = draw(st.sampled_from([Fraction(60), Fraction(96), Fraction(145, 2), Fraction(120)]))
        layout.append((key, meter, tempo))

    parts = []
    for p in range(n_parts):
        events = []  # (measure, onset, duration, midis)
        for i, (_, meter, _) in enumerate(layout):
            cursor = Fraction(0)
            while cursor < meter.capacity:
                duration = min(draw(st.sampled_from(STEPS)), meter.capacity - cursor)
                size = draw(st.integers(1, 3))
                chord = tuple(sorted(set(draw(st.lists(st.integers(36, 96), min_size=size, max_size=size)))))
                events.append((i, cursor, duration, chord))
                cursor += duration
        ties = [draw(st.booleans()) and k + 1 < len(events) and bool(set(e[3]) & set(events[k + 1][3]))
                for k, e in enumerate(events)]
        measures = []
        for i, (key, meter, tempo) in enumerate(layout):
            notes = []
            for k, (mi, onset, duration, chord) in enumerate(events):
                if mi != i:
                    continue
                notes.append(NoteEvent(
                    onset, duration, tuple(SpelledPitch.from_midi(m, key.fifths < 0) for m in chord),
                    tie_forward=ties[k], tie_backward=k > 0 and ties[k - 1],
                ))
            measures.append(Measure(i, meter, key, tempo, tuple(notes)))
        parts.append(Part(str(p + 1), declared_name=None, measures=tuple(measures)))
    return Score(tuple(parts), title="Generated")


def signature(score):
    return [
        [
            (m.key_signature, m.key_changes, m.time_signature, m.tempo_qpm,
             [(n.midis, n.onset, n.duration, n.tie_forward, n.tie_backward) for n in m.notes])
            for m in part.measures
        ]
        for part in score.parts
    ]


class TestRoundTripProperties:

    @settings(max_examples=1000, deadline=None)
    @given(small_scores())
    def test_parse_serialize_round_trip(self, score):
        """
        Feature: scorelint, Property 8: Serialization round-trips
        For any small grid-quantized score, parsing its canonical ABC gives back
        the same pitches, timing, ties, keys, meters and tempi.
        """
        reparsed = parse_abc(serialize_abc(score))
        assert [p.part_id for p in reparsed.parts] == [p.part_id for p in score.parts]
        assert signature(reparsed) == signature(score)

    def test_scale_round_trip(self):
        score = parse_abc(HEADER + "K:C\n|CDEF|GABc|")
        assert signature(parse_abc(serialize_abc(score))) == signature(score)

    def test_eighth_note_tempo_normalized(self):
        score = parse_abc("X:1\nL:1/8\nM:2/4\nQ:1/8=150\nK:C\n|CDEF|")
        assert score.first_tempo() == 75
        text = serialize_abc(score)
        assert "Q:1/4=75" in text
        assert parse_abc(text).first_tempo() == 75

    def test_tuplet_round_trip(self):
        score = parse_abc("X:1\nL:1/8\nM:2/4\nK:C\n|(3CDE F2|(5:4:5CDEFG|")
        reparsed = parse_abc(serialize_abc(score))
        assert signature(reparsed) == signature(score)

    def test_key_change_round_trip(self):
        score = parse_abc("X:1\nL:1/4\nM:4/4\nK:C\n|C D [K:D] F G|A B c d|")
        text = serialize_abc(score)
        assert "[K:D]" in text
        assert signature(parse_abc(text)) == signature(score)

    def test_quoted_part_name_is_refused(self):
        score = Score((Part("1", declared_name='Violin "solo"',
                            measures=(Measure(0, TimeSignature(4, 4), KeySignature.from_fifths(0)),)),))
        with pytest.raises(UnrepresentableError, match="name"):
            serialize_abc(score)

    def test_plain_part_name_is_quoted(self):
        score = parse_abc('X:1\nL:1/4\nM:2/4\nV:1 name="Violin II"\nK:C\n|C D|\n')
        assert 'V:1 name="Violin II"' in serialize_abc(score)

    def test_unrepresentable_duration(self):
        ts, key = TimeSignature(4, 4), KeySignature.from_fifths(0)
        odd = NoteEvent(Fraction(0), Fraction(4, 11), (SpelledPitch('C', 0, 4),))
        score = Score((Part("1", measures=(Measure(0, ts, key, notes=(odd,)),)),))
        with pytest.raises(UnrepresentableError):
            serialize_abc(score)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
