"""
Property-based tests for the score model.
Pitch spelling, key signatures, time signatures and measure timing.
"""

import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from score_model import (
    InstrumentConstraints, KeyDirection, KeySignature, Measure, Mode, NoteEvent, Part,
    RestEvent, Score, SpelledPitch, TimeSignature, absolute_notes, diatonic_pitch_classes,
    key_direction, pitch_class_set,
)


def note(onset, duration, *midis):
    return NoteEvent(Fraction(onset), Fraction(duration), tuple(SpelledPitch.from_midi(m) for m in midis))


C_MAJOR = KeySignature.from_fifths(0)
FOUR_FOUR = TimeSignature(4, 4)


class TestPitchProperties:
    """Property tests for spelled pitches."""

    @given(st.integers(min_value=0, max_value=127), st.booleans())
    def test_from_midi_round_trip(self, midi, prefer_flats):
        """
        Feature: scorelint, Property 1: Spelling preserves MIDI number
        For any MIDI number, spelling it and reading it back gives the same number.
        """
        pitch = SpelledPitch.from_midi(midi, prefer_flats)
        assert pitch.midi == midi
        assert pitch.pitch_class == midi % 12
        assert abs(pitch.alter) <= 1

    def test_reference_pitches(self):
        """Middle C is MIDI 60 and enharmonic spellings share a number."""
        assert SpelledPitch('C', 0, 4).midi == 60
        assert SpelledPitch('A', 0, 4).midi == 69
        assert SpelledPitch('F', 1, 4).midi == SpelledPitch('G', -1, 4).midi == 66
        assert SpelledPitch('B', 1, 3).midi == 60
        assert SpelledPitch('F', 1, 4).name == "F#4"

    def test_invalid_pitch_rejected(self):
        with pytest.raises(ValueError):
            SpelledPitch('H', 0, 4)
        with pytest.raises(ValueError):
            SpelledPitch('C', 3, 4)


class TestKeySignatureProperties:
    """Property tests for key signatures."""

    @given(st.integers(min_value=-7, max_value=7), st.sampled_from(list(Mode)))
    def test_from_fifths_consistent(self, fifths, mode):
        """
        Feature: scorelint, Property 2: Key construction agrees with the circle of fifths
        For any signature and mode, the key built from fifths rebuilds from its tonic.
        """
        key = KeySignature.from_fifths(fifths, mode)
        assert key.fifths == fifths
        assert KeySignature.from_tonic(key.tonic, mode) == key

    @given(st.integers(min_value=-7, max_value=7))
    def test_relative_keys_share_signature(self, fifths):
        """
        Feature: scorelint, Property 3: Relative keys share a signature
        """
        major = KeySignature.from_fifths(fifths)
        minor = major.relative()
        assert minor.mode is Mode.MINOR
        assert minor.fifths == fifths
        assert minor.relative() == major
        assert (major.tonic_pitch_class - minor.tonic_pitch_class) % 12 == 3

    def test_known_keys(self):
        assert str(KeySignature.from_tonic('A', Mode.MINOR)) == "A minor"
        assert KeySignature.from_tonic('A', Mode.MINOR).fifths == 0
        assert KeySignature.from_tonic('F#').fifths == 6
        assert KeySignature.from_tonic('Bb').fifths == -2
        assert KeySignature.from_tonic('D').alter_for('F') == 1
        assert KeySignature.from_tonic('D').alter_for('C') == 1
        assert KeySignature.from_tonic('D').alter_for('G') == 0
        assert KeySignature.from_tonic('Eb').alter_for('A') == -1

    def test_inconsistent_key_rejected(self):
        with pytest.raises(ValueError):
            KeySignature('C', 0, Mode.MAJOR, 1)
        with pytest.raises(ValueError):
            KeySignature.from_fifths(8)

    @given(st.integers(min_value=-7, max_value=7), st.sampled_from(list(Mode)))
    def test_diatonic_set_has_seven_classes(self, fifths, mode):
        key = KeySignature.from_fifths(fifths, mode)
        scale = diatonic_pitch_classes(key)
        assert len(scale) == 7
        assert key.tonic_pitch_class in scale
        # Relative keys use the same seven pitch classes.
        assert scale == diatonic_pitch_classes(key.relative())

    def test_key_direction(self):
        assert key_direction(KeySignature.from_tonic('G')) is KeyDirection.SHARP
        assert key_direction(KeySignature.from_tonic('F')) is KeyDirection.FLAT
        assert key_direction(KeySignature.from_tonic('A', Mode.MINOR)) is KeyDirection.NEUTRAL


class TestTimingProperties:
    """Property tests for measure timing."""

    @given(st.integers(min_value=1, max_value=15), st.sampled_from([1, 2, 4, 8, 16]))
    def test_capacity(self, numerator, denominator):
        """
        Feature: scorelint, Property 4: Capacity is the meter in quarter notes
        """
        ts = TimeSignature(numerator, denominator)
        assert ts.capacity == Fraction(4 * numerator, denominator)
        assert TimeSignature.parse(str(ts)) == ts

    def test_common_time(self):
        assert TimeSignature.parse("C") == TimeSignature(4, 4)
        assert TimeSignature.parse("C|") == TimeSignature(2, 2)
        assert TimeSignature(6, 8).capacity == Fraction(3)
        with pytest.raises(ValueError):
            TimeSignature(3, 5)

    def test_note_event_validation(self):
        with pytest.raises(ValueError):
            note(0, 0, 60)
        with pytest.raises(ValueError):
            NoteEvent(Fraction(0), Fraction(1), ())
        chord = note(0, 1, 60, 64, 67)
        assert chord.is_chord
        assert chord.explicit_accidentals == (False, False, False)
        assert chord.offset == 1

    def test_content_duration_counts_rests(self):
        measure = Measure(0, FOUR_FOUR, C_MAJOR, notes=(note(0, 1, 60),),
                          rests=(RestEvent(Fraction(1), Fraction(3)),))
        assert measure.content_duration == 4
        assert not measure.rests_only
        assert pitch_class_set(measure) == frozenset({0})

    def test_measure_offsets_follow_longest_part(self):
        """An anacrusis shortens the first measure for every part."""
        pickup = Measure(0, FOUR_FOUR, C_MAJOR, notes=(note(0, 1, 60),))
        full = Measure(1, FOUR_FOUR, C_MAJOR, notes=(note(0, 4, 62),))
        silent = Measure(0, FOUR_FOUR, C_MAJOR)
        silent_full = Measure(1, FOUR_FOUR, C_MAJOR, notes=(note(2, 2, 48),))
        score = Score((Part("1", measures=(pickup, full)), Part("2", measures=(silent, silent_full))))
        assert score.measure_lengths() == [Fraction(1), Fraction(4)]
        assert score.measure_offsets() == [Fraction(0), Fraction(1)]
        placed = absolute_notes(score.parts[1], score.measure_offsets())
        assert [onset for onset, _ in placed] == [Fraction(3)]

    def test_first_tempo_and_counts(self):
        m0 = Measure(0, FOUR_FOUR, C_MAJOR, notes=(note(0, 4, 60),))
        m2 = Measure(2, FOUR_FOUR, C_MAJOR, tempo_qpm=Fraction(90), notes=(note(0, 4, 60),))
        part = Part("1", declared_name="Flute", measures=(m0, Measure(1, FOUR_FOUR, C_MAJOR), m2))
        score = Score((part,))
        assert score.first_tempo() == 90
        assert part.label == "Flute"
        assert part.note_count == 2
        assert part.note_bearing_measures() == [0, 2]


class TestInstrumentConstraintsProperties:

    def test_canonical_name_is_an_alias(self):
        entry = InstrumentConstraints("Cello", frozenset({"vc"}), (36, 76), 12, False)
        assert "Cello" in entry.aliases

    def test_inverted_range_rejected(self):
        with pytest.raises(ValueError):
            InstrumentConstraints("Broken", frozenset(), (80, 40), None, True)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
