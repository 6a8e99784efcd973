"""
Property-based tests for plan extraction, pivot selection and the plan JSON format.
"""

import json
import pytest
from fractions import Fraction
from pathlib import Path
from hypothesis import given, settings, strategies as st

from abc_parser import parse_abc
from config_manager import PIVOT_CHANNELS, ScoreLintSettings
from constraints_manager import load_instrument_table
from error_handler import EmptyScoreError, SchemaError
from plan_extractor import (
    DensityLevel, MeasurePlan, PlanDocument, change_vectors, density_level, extract_plan,
    plan_from_dict, plan_to_dict, read_plan, select_pivots, write_plan,
)
from score_model import KeySignature, Mode, Score, TimeSignature

FIXTURES = Path(__file__).parent / "fixtures"
TABLE = load_instrument_table()
DEFAULTS = ScoreLintSettings()

C_MAJOR = KeySignature.from_fifths(0)
D_MAJOR = KeySignature.from_fifths(2)


def flat_plan(n, key_at=lambda i: C_MAJOR, tempo_at=lambda i: Fraction(100)):
    """Plan with identical measures apart from the given key and tempo curves."""
    measures = tuple(
        MeasurePlan(i, frozenset({"Flute"}), (60, 72), DensityLevel.MEDIUM, tempo_at(i),
                    TimeSignature(4, 4), key_at(i), frozenset({0, 4, 7}))
        for i in range(n)
    )
    return PlanDocument(n, None, frozenset({"Flute"}), measures)


def single_profile(name):
    return ScoreLintSettings(weight_profiles={name: DEFAULTS.weight_profiles[name]})


class TestPlanExtraction:
    """Dense plan extraction."""

    def test_chorale_plan_matches_fixture(self):
        score = parse_abc((FIXTURES / "chorale.abc").read_text(encoding="utf-8"))
        plan = extract_plan(score, TABLE)
        expected = read_plan((FIXTURES / "chorale.json").read_bytes())
        assert plan.n_measures == 8
        assert plan.is_dense
        assert plan == expected

    def test_chorale_density_levels(self):
        score = parse_abc((FIXTURES / "chorale.abc").read_text(encoding="utf-8"))
        plan = extract_plan(score, TABLE)
        low = [m.index for m in plan.measures if m.density is DensityLevel.LOW]
        assert low == [3, 7]
        assert plan.instrumentation == frozenset({"Soprano", "Bass Voice"})
        assert all(m.tempo_qpm == 80 for m in plan.measures)

    def test_density_thresholds(self):
        four = Fraction(4)
        assert density_level(3, four, DEFAULTS) is DensityLevel.LOW
        assert density_level(4, four, DEFAULTS) is DensityLevel.MEDIUM
        assert density_level(10, four, DEFAULTS) is DensityLevel.MEDIUM
        assert density_level(11, four, DEFAULTS) is DensityLevel.HIGH

    def test_missing_tempo_uses_default(self):
        plan = extract_plan(parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C D|E F|"), TABLE)
        assert [m.tempo_qpm for m in plan.measures] == [120, 120]

    def test_tempo_carries_forward(self):
        plan = extract_plan(parse_abc("X:1\nL:1/4\nM:2/4\nQ:1/4=90\nK:C\n|C D|E F|[Q:1/4=60]G A|"), TABLE)
        assert [m.tempo_qpm for m in plan.measures] == [90, 90, 60]

    def test_silent_measure(self):
        plan = extract_plan(parse_abc("X:1\nL:1/4\nM:2/4\nK:C\n|C D|z2|"), TABLE)
        silent = plan.measure(1)
        assert silent.pitch_range is None
        assert silent.instruments == frozenset()
        assert silent.chord_pcs == frozenset()

    def test_empty_score_rejected(self):
        with pytest.raises(EmptyScoreError):
            extract_plan(Score(()), TABLE)


class TestPivotProperties:
    """Pivot selection over change vectors."""

    @pytest.mark.parametrize("profile", ["rhythm", "harmony", "timbre"])
    def test_key_change_ranks_first(self, profile):
        """
        Feature: scorelint, Property 9: A lone attribute change is the top pivot under every profile
        """
        plan = flat_plan(20, key_at=lambda i: D_MAJOR if i >= 12 else C_MAJOR)
        for seed in range(6):
            selection = select_pivots(plan, seed, single_profile(profile))
            assert selection.weight_profile_id == profile
            assert selection.ranking[0] == 12
            assert 12 in selection.indices
            assert selection.indices[0] == 0
            assert len(selection.indices) == 5 + seed % 6

    def test_measure_zero_fires_every_channel(self):
        vectors = change_vectors(flat_plan(4))
        assert all(vectors[0][c] == 1 for c in PIVOT_CHANNELS)
        assert all(v == 0 for vector in vectors[1:] for v in vector.values())

    def test_small_plan_clamps(self):
        selection = select_pivots(flat_plan(3), seed=5)
        assert selection.indices == (0, 1, 2)

    def test_tempo_channel_normalized(self):
        plan = flat_plan(3, tempo_at=lambda i: Fraction(100 if i < 2 else 50))
        vectors = change_vectors(plan)
        assert vectors[2]["tempo"] == Fraction(1, 2)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000),
           st.lists(st.integers(min_value=-3, max_value=3), min_size=1, max_size=30))
    def test_selection_is_deterministic(self, seed, fifths):
        """
        Feature: scorelint, Property 10: Pivot selection is a pure function of plan and seed
        For any plan and seed, repeated selection gives identical output and a
        sparse plan that passes the schema.
        """
        plan = flat_plan(len(fifths), key_at=lambda i: KeySignature.from_fifths(fifths[i]))
        first = select_pivots(plan, seed)
        assert all(select_pivots(plan, seed) == first for _ in range(3))
        assert first.to_dict() == select_pivots(plan, seed).to_dict()
        assert len(first.indices) == min(5 + seed % 6, len(fifths))
        assert list(first.indices) == sorted(set(first.indices))
        sparse = plan.sparse(first.indices)
        assert read_plan(write_plan(sparse)) == sparse

    def test_repeated_runs_identical(self):
        plan = flat_plan(20, key_at=lambda i: D_MAJOR if i >= 12 else C_MAJOR)
        first = select_pivots(plan, 42)
        assert all(select_pivots(plan, 42) == first for _ in range(100))

    def test_sparse_requires_dense_input(self):
        plan = flat_plan(8).sparse([0, 3])
        with pytest.raises(ValueError):
            select_pivots(plan, 0)


class TestPlanFormat:
    """Plan JSON reading and writing."""

    def _sparse_document(self, indices, n_measures=16):
        plan = flat_plan(n_measures)
        document = plan_to_dict(plan)
        document["measures"] = [m for m in document["measures"] if m["index"] in indices]
        return document

    def test_sparse_plan_accepted(self):
        plan = plan_from_dict(self._sparse_document({0, 7, 15}))
        assert [m.index for m in plan.measures] == [0, 7, 15]
        assert not plan.is_dense

    def test_index_beyond_length_rejected(self):
        document = self._sparse_document({0, 7, 15})
        document["measures"][2]["index"] = 16
        with pytest.raises(SchemaError) as info:
            plan_from_dict(document)
        assert info.value.pointer == "/measures/2/index"

    def test_schema_violation_pointer(self):
        document = self._sparse_document({0, 7})
        document["measures"][1]["density"] = "extreme"
        with pytest.raises(SchemaError) as info:
            plan_from_dict(document)
        assert info.value.pointer == "/measures/1/density"

    def test_decreasing_indices_rejected(self):
        document = self._sparse_document({0, 7})
        document["measures"].reverse()
        with pytest.raises(SchemaError):
            plan_from_dict(document)

    def test_unknown_instrument_in_measure(self):
        document = self._sparse_document({0})
        document["measures"][0]["instruments"] = ["Oboe"]
        with pytest.raises(SchemaError) as info:
            plan_from_dict(document)
        assert info.value.pointer == "/measures/0/instruments"

    def test_invalid_json(self):
        with pytest.raises(SchemaError):
            read_plan(b"{not json")

    def test_canonical_bytes(self):
        plan = flat_plan(2, tempo_at=lambda i: Fraction(145, 2))
        data = write_plan(plan)
        assert data.endswith(b"\n")
        decoded = json.loads(data)
        assert list(decoded) == sorted(decoded)
        assert decoded["measures"][0]["tempo_qpm"] == "145/2"
        assert read_plan(data) == plan

    def test_fractional_tempo_is_exact(self):
        plan = flat_plan(2, tempo_at=lambda i: Fraction(100, 3) if i == 0 else Fraction(96))
        data = write_plan(plan)
        decoded = json.loads(data)
        assert decoded["measures"][0]["tempo_qpm"] == "100/3"
        assert decoded["measures"][1]["tempo_qpm"] == 96
        assert read_plan(data).measures[0].tempo_qpm == Fraction(100, 3)
        assert read_plan(data) == plan

    @pytest.mark.parametrize("tempo", ["0/3", "100", "100/0", "-3/2", 0])
    def test_malformed_tempo_rejected(self, tempo):
        document = self._sparse_document({0})
        document["measures"][0]["tempo_qpm"] = tempo
        with pytest.raises(SchemaError):
            plan_from_dict(document)

    def test_minor_key_survives(self):
        plan = flat_plan(1, key_at=lambda i: KeySignature.from_tonic('A', Mode.MINOR))
        assert read_plan(write_plan(plan)).measures[0].key_signature.mode is Mode.MINOR


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
